//! Model checkpoints: a directory with `manifest.txt` and one binary matrix
//! (plus `.meta`) per tensor.
//!
//! ```text
//! manifest.txt        arch=gcn d=128 L=2 epoch=1000 seed=7 input_dim=1433 classes=7
//! layer_0.bin ...     encoder matrices
//! att_src_0.bin ...   GAT scoring vectors, stored as 1×d matrices
//! head.bin            decoder, absent for encoder-only checkpoints
//! ```
//!
//! Values are stored as f32, matching the bundle feature format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::bundle::{load_matrix, save_matrix};
use crate::encoders::{ArchKind, AttentionParams, EncoderWeights};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::training::ClassifierHead;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: EncoderWeights,
    pub head: Option<ClassifierHead>,
    pub epoch: usize,
    pub seed: u64,
}

fn vector_matrix(v: &[f64]) -> DenseMatrix {
    DenseMatrix::from_vec(1, v.len(), v.to_vec()).expect("1×len")
}

pub fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = &ck.weights;
    let mut manifest = format!(
        "arch={} d={} L={} epoch={} seed={} input_dim={}",
        w.arch,
        w.output_dim(),
        w.depth,
        ck.epoch,
        ck.seed,
        w.input_dim()
    );
    if let Some(h) = &ck.head {
        manifest.push_str(&format!(" classes={}", h.weight.cols()));
    }
    manifest.push('\n');
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    for (l, m) in w.layers.iter().enumerate() {
        save_matrix(&dir.join(format!("layer_{l}.bin")), m)?;
    }
    for (l, a) in w.attention.iter().enumerate() {
        save_matrix(&dir.join(format!("att_src_{l}.bin")), &vector_matrix(&a.src))?;
        save_matrix(&dir.join(format!("att_dst_{l}.bin")), &vector_matrix(&a.dst))?;
    }
    if let Some(h) = &ck.head {
        save_matrix(&dir.join("head.bin"), &h.weight)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let fields: BTreeMap<&str, &str> = text
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::format(&path, format!("missing {k}")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(&path, format!("{k} is not an integer")))
    };
    let arch: ArchKind = get("arch")?.parse()?;
    let depth = num("L")? as usize;
    let layer_count = if arch == ArchKind::Linear { 1 } else { depth };
    let layers = (0..layer_count)
        .map(|l| load_matrix(&dir.join(format!("layer_{l}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    let attention = if arch == ArchKind::Gat {
        (0..layer_count)
            .map(|l| {
                Ok(AttentionParams {
                    src: load_matrix(&dir.join(format!("att_src_{l}.bin")))?.into_vec(),
                    dst: load_matrix(&dir.join(format!("att_dst_{l}.bin")))?.into_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let weights = EncoderWeights {
        arch,
        layers,
        attention,
        depth,
    };
    weights.validate()?;
    let head_path = dir.join("head.bin");
    let head = if head_path.exists() {
        Some(ClassifierHead {
            weight: load_matrix(&head_path)?,
        })
    } else {
        None
    };
    Ok(Checkpoint {
        weights,
        head,
        epoch: num("epoch")? as usize,
        seed: num("seed")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_weights, InitScheme};

    #[test]
    fn round_trip_gat_with_head() {
        let tmp = tempfile::tempdir().unwrap();
        let weights = init_weights(ArchKind::Gat, 3, 4, 2, InitScheme::He, 1).unwrap();
        // exact in f32
        let round = |m: &DenseMatrix| DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) as f32 as f64);
        let weights = EncoderWeights {
            layers: weights.layers.iter().map(round).collect(),
            attention: weights
                .attention
                .iter()
                .map(|a| AttentionParams {
                    src: a.src.iter().map(|&x| x as f32 as f64).collect(),
                    dst: a.dst.iter().map(|&x| x as f32 as f64).collect(),
                })
                .collect(),
            ..weights
        };
        let ck = Checkpoint {
            weights,
            head: Some(ClassifierHead {
                weight: DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 0.0], [0.0, 1.0], [3.0, 4.0]]),
            }),
            epoch: 12,
            seed: 99,
        };
        save_checkpoint(tmp.path(), &ck).unwrap();
        assert_eq!(load_checkpoint(tmp.path()).unwrap(), ck);
    }

    #[test]
    fn linear_without_head() {
        let tmp = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            weights: EncoderWeights::linear(DenseMatrix::identity(3), 4).unwrap(),
            head: None,
            epoch: 0,
            seed: 0,
        };
        save_checkpoint(tmp.path(), &ck).unwrap();
        let back = load_checkpoint(tmp.path()).unwrap();
        assert_eq!(back, ck);
        fs::remove_file(tmp.path().join("layer_0.bin")).unwrap();
        assert!(load_checkpoint(tmp.path()).is_err());
    }
}
