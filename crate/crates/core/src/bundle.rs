//! On-disk dataset bundles.
//!
//! A bundle is a directory:
//!
//! ```text
//! meta.txt         n=<int> / d=<int> / classes=<int>, one key=value per line
//! edges.tsv        u<TAB>v, 0-based, one line per unordered pair
//! features.bin     n*d little-endian f32, row-major, no header
//! labels.tsv       one class id per line
//! mask_train.tsv   one node id per line (likewise mask_test.tsv, mask_val.tsv)
//! ```
//!
//! Features are widened to f64 on load. Repeated pairs (in either
//! orientation) are dropped and counted in the [`LoadReport`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSubset};
use crate::matrix::DenseMatrix;

pub const TRAIN: &str = "train";
pub const TEST: &str = "test";
pub const VAL: &str = "val";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub masks: BTreeMap<String, NodeSubset>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicate_edges: usize,
}

impl DatasetBundle {
    pub fn new(
        graph: Graph,
        features: DenseMatrix,
        labels: Vec<usize>,
        classes: usize,
        masks: BTreeMap<String, NodeSubset>,
    ) -> Result<Self> {
        let b = Self {
            graph,
            features,
            labels,
            classes,
            masks,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::Dimension(format!(
                "graph has {n} nodes, features {} rows, labels {} entries",
                self.features.rows(),
                self.labels.len()
            )));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::Dimension(format!(
                "label {y} outside 0..{}",
                self.classes
            )));
        }
        for (name, mask) in &self.masks {
            if mask.ids().last().is_some_and(|&id| id >= n) {
                return Err(Error::InvalidSubset(format!("mask {name} has ids >= {n}")));
            }
        }
        if let (Some(train), Some(test)) = (self.masks.get(TRAIN), self.masks.get(TEST)) {
            if !train.is_disjoint(test) {
                return Err(Error::InvalidSubset("train and test masks overlap".into()));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn mask(&self, name: &str) -> Result<&NodeSubset> {
        self.masks
            .get(name)
            .ok_or_else(|| Error::InvalidSubset(format!("bundle has no {name} mask")))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_usize(path: &Path, lineno: usize, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {lineno}: expected an integer, got {s:?}")))
}

fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn meta_usize(meta: &BTreeMap<String, String>, path: &Path, key: &str) -> Result<usize> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::format(path, format!("missing key {key}")))?;
    v.parse()
        .map_err(|_| Error::format(path, format!("{key}={v} is not an integer")))
}

fn read_id_lines(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_usize(path, i + 1, l))
        .collect()
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(path, format!("line {}: expected u<TAB>v", i + 1)));
        };
        let (u, v) = (parse_usize(path, i + 1, u)?, parse_usize(path, i + 1, v)?);
        if u == v {
            return Err(Error::format(path, format!("line {}: self-loop on node {u}", i + 1)));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Reads `rows * cols` little-endian f32 values.
pub fn read_f32_matrix(path: &Path, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes for a {rows}x{cols} f32 matrix, found {}",
                rows * cols * 4,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_f32_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `path` (f32 payload) plus `path.meta` holding `rows=` and `cols=`.
pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_f32_matrix(path, m)?;
    let meta = meta_path(path);
    fs::write(&meta, format!("rows={}\ncols={}\n", m.rows(), m.cols()))
        .map_err(|e| Error::io(&meta, e))
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let meta_file = meta_path(path);
    let meta = read_meta(&meta_file)?;
    let rows = meta_usize(&meta, &meta_file, "rows")?;
    let cols = meta_usize(&meta, &meta_file, "cols")?;
    read_f32_matrix(path, rows, cols)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(DatasetBundle, LoadReport)> {
    let dir = dir.as_ref();
    let meta_file = dir.join("meta.txt");
    let meta = read_meta(&meta_file)?;
    let n = meta_usize(&meta, &meta_file, "n")?;
    let d = meta_usize(&meta, &meta_file, "d")?;
    let classes = meta_usize(&meta, &meta_file, "classes")?;

    let edges_file = dir.join("edges.tsv");
    let edges = read_edges(&edges_file)?;
    let (graph, edge_report) = Graph::from_edges_report(n, edges)
        .map_err(|e| Error::format(&edges_file, e.to_string()))?;

    let features = read_f32_matrix(&dir.join("features.bin"), n, d)?;

    let labels_file = dir.join("labels.tsv");
    let labels = read_id_lines(&labels_file)?;
    if labels.len() != n {
        return Err(Error::format(
            &labels_file,
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }

    let mut masks = BTreeMap::new();
    for name in [TRAIN, TEST, VAL] {
        let file = dir.join(format!("mask_{name}.tsv"));
        if !file.exists() {
            if name == VAL {
                continue;
            }
            return Err(Error::io(
                &file,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing mask file"),
            ));
        }
        let ids = read_id_lines(&file)?;
        let subset = NodeSubset::new(ids, n).map_err(|e| Error::format(&file, e.to_string()))?;
        masks.insert(name.to_string(), subset);
    }

    let bundle = DatasetBundle::new(graph, features, labels, classes, masks)?;
    Ok((
        bundle,
        LoadReport {
            duplicate_edges: edge_report.duplicates,
        },
    ))
}

pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = dir.join("meta.txt");
    fs::write(
        &meta,
        format!(
            "n={}\nd={}\nclasses={}\n",
            bundle.node_count(),
            bundle.feature_dim(),
            bundle.classes
        ),
    )
    .map_err(|e| Error::io(&meta, e))?;

    write_lines(&dir.join("edges.tsv"), bundle.graph.edges().map(|(u, v)| format!("{u}\t{v}")))?;
    write_f32_matrix(&dir.join("features.bin"), &bundle.features)?;
    write_lines(&dir.join("labels.tsv"), bundle.labels.iter().map(|y| y.to_string()))?;
    for (name, mask) in &bundle.masks {
        write_lines(
            &dir.join(format!("mask_{name}.tsv")),
            mask.ids().iter().map(|id| id.to_string()),
        )?;
    }
    Ok(())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
