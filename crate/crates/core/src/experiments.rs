//! Config-driven sweeps: expand a grid, run every (cell, replicate) through
//! generate → (train) → encode → attack, and write one CSV row per run.
//!
//! Seeding: each stage draws from `stage_seed(master_seed, key)` where the
//! key names the stage, the replicate and only the grid coordinates the
//! stage depends on. The graph for a replicate is therefore shared by every
//! architecture and width in the grid, and adding a cell never perturbs
//! another cell's numbers.
//!
//! Config grammar (TOML; every list key also accepts a scalar):
//!
//! ```toml
//! gen = "er"            # er | sbm | inhom | bundle
//! bundle = "data/cora"  # gen = "bundle"
//! probs = "p.bin"       # gen = "inhom": matrix written by save_matrix
//! n = [100, 1000]       # er / sbm
//! p = [0.05]            # er: defaults to ln(n)/n; sbm: within-group
//! q = [0.01]            # sbm cross-group
//! K = [3]               # sbm groups
//! d = [2048]
//! L = [1, 2]
//! arch = ["linear", "gcn"]
//! sigma = [0.0]
//! scheme = "unconstrained"
//! sim = "cos"
//! init = "identity"     # identity | he | product
//! trained = false
//! mode = "standard"     # default: nag when trained or sigma > 0
//! target = "full"       # default: test for trained bundles, else full
//! seeds = 5
//! master_seed = 0
//! epochs = 1000
//! learning_rate = 0.001
//! baseline = true       # feature-similarity AUROC column
//! threads = 1
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::attack::{auroc, best_threshold, feature_baseline, feature_homophily, label_homophily, score_pairs, SimilarityKind};
use crate::bundle::{load_bundle, load_matrix, DatasetBundle, TEST};
use crate::defense::nag_bound;
use crate::encoders::{init_weights, ArchKind, InitScheme, Mode, NagConfig};
use crate::error::{Error, Result};
use crate::generators::{gen_er, gen_features, gen_inhomogeneous, gen_sbm, ErSpec, SbmSpec};
use crate::graph::{Graph, NodeSubset};
use crate::matrix::DenseMatrix;
use crate::rng::stage_seed;
use crate::training::{default_train_encoder, eval_seed, inference_representations, train_from, AdamConfig, ClassifierHead, TrainConfig, TrainScheme};

pub const CSV_HEADER: [&str; 28] = [
    "gen", "n", "K", "p", "q", "d", "L", "arch", "init", "scheme", "sigma", "sim", "trained",
    "target", "seed", "auroc", "best_err", "fpr", "fnr", "acc_noisy", "acc_clean", "bound",
    "opnorm_sq", "h_label", "h_feature", "fs_auroc", "ms_elapsed", "status",
];

/// Marker for values that do not apply to a row or could not be computed.
pub const NA: &str = "NA";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    Er,
    Sbm,
    Inhom,
    Bundle,
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenKind::Er => "er",
            GenKind::Sbm => "sbm",
            GenKind::Inhom => "inhom",
            GenKind::Bundle => "bundle",
        })
    }
}

impl FromStr for GenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "er" => Ok(GenKind::Er),
            "sbm" => Ok(GenKind::Sbm),
            "inhom" | "inhomogeneous" => Ok(GenKind::Inhom),
            "bundle" => Ok(GenKind::Bundle),
            other => Err(Error::Config(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    FullGraph,
    TestSubgraph,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::FullGraph => "full",
            Target::TestSubgraph => "test",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "full_graph" => Ok(Target::FullGraph),
            "test" | "test_subgraph" => Ok(Target::TestSubgraph),
            other => Err(Error::Config(format!("unknown attack target {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    gen: String,
    bundle: Option<PathBuf>,
    probs: Option<PathBuf>,
    n: Option<OneOrMany<usize>>,
    #[serde(alias = "k")]
    #[serde(rename = "K")]
    k: Option<OneOrMany<usize>>,
    p: Option<OneOrMany<f64>>,
    q: Option<OneOrMany<f64>>,
    d: OneOrMany<usize>,
    #[serde(alias = "l")]
    #[serde(rename = "L")]
    depth: OneOrMany<usize>,
    arch: OneOrMany<String>,
    sigma: Option<OneOrMany<f64>>,
    scheme: Option<String>,
    sim: Option<String>,
    init: Option<String>,
    trained: Option<bool>,
    mode: Option<String>,
    target: Option<String>,
    seeds: Option<usize>,
    master_seed: Option<u64>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    baseline: Option<bool>,
    threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub gen: GenKind,
    pub bundle: Option<PathBuf>,
    pub probs: Option<PathBuf>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    /// Empty means "ln(n)/n" for ER.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub d: Vec<usize>,
    pub depth: Vec<usize>,
    pub arch: Vec<ArchKind>,
    pub sigma: Vec<f64>,
    pub scheme: TrainScheme,
    pub sim: SimilarityKind,
    pub init: InitScheme,
    pub trained: bool,
    pub mode: Option<Mode>,
    pub target: Option<Target>,
    pub seeds: usize,
    pub master_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub baseline: bool,
    pub threads: Option<usize>,
}

fn parse_list<T: FromStr<Err = Error>>(items: Vec<String>) -> Result<Vec<T>> {
    items
        .iter()
        .map(|s| s.parse().map_err(|e: Error| Error::Config(e.to_string())))
        .collect()
}

fn parse_opt<T: FromStr<Err = Error>>(s: Option<String>, default: T) -> Result<T> {
    match s {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e: Error| Error::Config(e.to_string())),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let list = |v: Option<OneOrMany<usize>>, default: Vec<usize>| v.map_or(default, OneOrMany::into_vec);
        let cfg = Self {
            gen: raw.gen.parse()?,
            bundle: raw.bundle,
            probs: raw.probs,
            n: list(raw.n, vec![]),
            k: list(raw.k, vec![1]),
            p: raw.p.map_or(vec![], OneOrMany::into_vec),
            q: raw.q.map_or(vec![0.0], OneOrMany::into_vec),
            d: raw.d.into_vec(),
            depth: raw.depth.into_vec(),
            arch: parse_list(raw.arch.into_vec())?,
            sigma: raw.sigma.map_or(vec![0.0], OneOrMany::into_vec),
            scheme: parse_opt(raw.scheme, TrainScheme::Unconstrained)?,
            sim: parse_opt(raw.sim, SimilarityKind::Cos)?,
            init: parse_opt(raw.init, InitScheme::He)?,
            trained: raw.trained.unwrap_or(false),
            mode: raw.mode.map(|m| m.parse()).transpose().map_err(|e: Error| Error::Config(e.to_string()))?,
            target: raw.target.map(|t| t.parse()).transpose()?,
            seeds: raw.seeds.unwrap_or(5),
            master_seed: raw.master_seed.unwrap_or(0),
            epochs: raw.epochs.unwrap_or(1000),
            learning_rate: raw.learning_rate.unwrap_or(1e-3),
            baseline: raw.baseline.unwrap_or(true),
            threads: raw.threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("grid axis {name} is empty")))
            } else {
                Ok(())
            }
        };
        nonempty("d", self.d.len())?;
        nonempty("L", self.depth.len())?;
        nonempty("arch", self.arch.len())?;
        nonempty("sigma", self.sigma.len())?;
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::Config(format!("sigma {s} must be non-negative")));
        }
        match self.gen {
            GenKind::Er => nonempty("n", self.n.len())?,
            GenKind::Sbm => {
                nonempty("n", self.n.len())?;
                nonempty("K", self.k.len())?;
                nonempty("p", self.p.len())?;
                nonempty("q", self.q.len())?;
            }
            GenKind::Inhom if self.probs.is_none() => {
                return Err(Error::Config("gen = \"inhom\" needs a probs path".into()))
            }
            GenKind::Bundle if self.bundle.is_none() => {
                return Err(Error::Config("gen = \"bundle\" needs a bundle path".into()))
            }
            _ => {}
        }
        if self.trained && self.gen != GenKind::Bundle {
            return Err(Error::Config("training needs labels and masks: use gen = \"bundle\"".into()));
        }
        Ok(())
    }

    /// Grid cells in deterministic order (outermost axis first: n, K, p, q, d, L, arch, sigma).
    pub fn cells(&self) -> Vec<Cell> {
        let one = |v: &[usize]| if v.is_empty() { vec![None] } else { v.iter().map(|&x| Some(x)).collect() };
        let onef = |v: &[f64]| if v.is_empty() { vec![None] } else { v.iter().map(|&x| Some(x)).collect() };
        let (ns, ks, ps, qs) = match self.gen {
            GenKind::Er => (one(&self.n), vec![None], onef(&self.p), vec![None]),
            GenKind::Sbm => (one(&self.n), one(&self.k), onef(&self.p), onef(&self.q)),
            GenKind::Inhom | GenKind::Bundle => (vec![None], vec![None], vec![None], vec![None]),
        };
        let mut out = Vec::new();
        for &n in &ns {
            for &k in &ks {
                for &p in &ps {
                    for &q in &qs {
                        for &d in &self.d {
                            for &depth in &self.depth {
                                for &arch in &self.arch {
                                    for &sigma in &self.sigma {
                                        out.push(Cell { n, k, p, q, d, depth, arch, sigma });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn mode_for(&self, cell: &Cell) -> Mode {
        self.mode.unwrap_or(if self.trained || cell.sigma > 0.0 {
            Mode::Nag
        } else {
            Mode::Standard
        })
    }

    fn target(&self) -> Target {
        self.target.unwrap_or(if self.trained && self.gen == GenKind::Bundle {
            Target::TestSubgraph
        } else {
            Target::FullGraph
        })
    }
}

/// One point of the grid. Generator coordinates are `None` where they do not apply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub d: usize,
    pub depth: usize,
    pub arch: ArchKind,
    pub sigma: f64,
}

fn opt<T: fmt::Display>(x: Option<T>) -> String {
    x.map_or_else(|| NA.to_string(), |v| v.to_string())
}

impl Cell {
    fn graph_key(&self, gen: GenKind) -> String {
        format!("gen={gen}|n={}|K={}|p={}|q={}", opt(self.n), opt(self.k), opt(self.p), opt(self.q))
    }

    fn key(&self, gen: GenKind, cfg: &ExperimentConfig) -> String {
        format!(
            "{}|d={}|L={}|arch={}|sigma={}|init={}|scheme={}|trained={}|epochs={}|lr={}",
            self.graph_key(gen),
            self.d,
            self.depth,
            self.arch,
            self.sigma,
            cfg.init,
            cfg.scheme,
            cfg.trained,
            cfg.epochs,
            cfg.learning_rate
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub gen: GenKind,
    pub n: usize,
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub d: usize,
    pub depth: usize,
    pub arch: ArchKind,
    pub init: InitScheme,
    pub scheme: TrainScheme,
    pub sigma: f64,
    pub sim: SimilarityKind,
    pub trained: bool,
    pub target: Target,
    pub seed: usize,
    pub auroc: Option<f64>,
    pub best_err: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub acc_noisy: Option<f64>,
    pub acc_clean: Option<f64>,
    pub bound: Option<f64>,
    pub opnorm_sq: Option<f64>,
    pub h_label: Option<f64>,
    pub h_feature: Option<f64>,
    pub fs_auroc: Option<f64>,
    pub ms_elapsed: u128,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

impl ExperimentRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.gen.to_string(),
            self.n.to_string(),
            opt(self.k),
            opt(self.p),
            opt(self.q),
            self.d.to_string(),
            self.depth.to_string(),
            self.arch.to_string(),
            self.init.to_string(),
            self.scheme.to_string(),
            self.sigma.to_string(),
            self.sim.to_string(),
            self.trained.to_string(),
            self.target.to_string(),
            self.seed.to_string(),
            opt(self.auroc),
            opt(self.best_err),
            opt(self.fpr),
            opt(self.fnr),
            opt(self.acc_noisy),
            opt(self.acc_clean),
            opt(self.bound),
            opt(self.opnorm_sq),
            opt(self.h_label),
            opt(self.h_feature),
            opt(self.fs_auroc),
            self.ms_elapsed.to_string(),
            self.status.clone(),
        ]
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// A loaded experiment: the config plus any data it reads from disk.
pub struct Experiment {
    pub config: ExperimentConfig,
    bundle: Option<DatasetBundle>,
    probs: Option<DenseMatrix>,
}

struct Instance {
    graph: Graph,
    features: DenseMatrix,
    labels: Option<Vec<usize>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let bundle = match (&config.gen, &config.bundle) {
            (GenKind::Bundle, Some(dir)) => Some(load_bundle(dir)?.0),
            _ => None,
        };
        let probs = match (&config.gen, &config.probs) {
            (GenKind::Inhom, Some(path)) => Some(load_matrix(path)?),
            _ => None,
        };
        Ok(Self { config, bundle, probs })
    }

    /// Use an in-memory bundle instead of reading `config.bundle`.
    pub fn with_bundle(config: ExperimentConfig, bundle: DatasetBundle) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, bundle: Some(bundle), probs: None })
    }

    fn seed(&self, key: &str, stage: &str, replicate: usize) -> u64 {
        stage_seed(self.config.master_seed, &format!("{key}|stage={stage}|rep={replicate}"))
    }

    fn instance(&self, cell: &Cell, replicate: usize) -> Result<Instance> {
        let gen = self.config.gen;
        let gkey = cell.graph_key(gen);
        let feature_seed = self.seed(&format!("{gkey}|d={}", cell.d), "features", replicate);
        let graph_seed = self.seed(&gkey, "graph", replicate);
        match gen {
            GenKind::Er => {
                let n = cell.n.expect("er cells carry n");
                let spec = match cell.p {
                    Some(p) => ErSpec { n, p },
                    None => ErSpec::sparse(n),
                };
                Ok(Instance {
                    graph: gen_er(spec, graph_seed)?,
                    features: gen_features(n, cell.d, feature_seed)?,
                    labels: None,
                })
            }
            GenKind::Sbm => {
                let n = cell.n.expect("sbm cells carry n");
                let spec = SbmSpec {
                    n,
                    k: cell.k.expect("sbm cells carry K"),
                    p: cell.p.expect("sbm cells carry p"),
                    q: cell.q.expect("sbm cells carry q"),
                };
                let (graph, membership) = gen_sbm(spec, graph_seed)?;
                Ok(Instance {
                    graph,
                    features: gen_features(n, cell.d, feature_seed)?,
                    labels: Some(membership),
                })
            }
            GenKind::Inhom => {
                let probs = self.probs.as_ref().ok_or_else(|| Error::Config("probability matrix not loaded".into()))?;
                Ok(Instance {
                    graph: gen_inhomogeneous(probs, graph_seed)?,
                    features: gen_features(probs.rows(), cell.d, feature_seed)?,
                    labels: None,
                })
            }
            GenKind::Bundle => {
                let b = self.bundle.as_ref().ok_or_else(|| Error::Config("bundle not loaded".into()))?;
                Ok(Instance {
                    graph: b.graph.clone(),
                    features: b.features.clone(),
                    labels: Some(b.labels.clone()),
                })
            }
        }
    }

    fn blank_row(&self, cell: &Cell, replicate: usize) -> ExperimentRow {
        let cfg = &self.config;
        let n = match cfg.gen {
            GenKind::Bundle => self.bundle.as_ref().map_or(0, |b| b.node_count()),
            GenKind::Inhom => self.probs.as_ref().map_or(0, |p| p.rows()),
            _ => cell.n.unwrap_or(0),
        };
        let p = match (cfg.gen, cell.p, cell.n) {
            (GenKind::Er, None, Some(n)) => Some(ErSpec::sparse(n).p),
            (_, p, _) => p,
        };
        ExperimentRow {
            gen: cfg.gen,
            n,
            k: cell.k,
            p,
            q: cell.q,
            d: cell.d,
            depth: cell.depth,
            arch: cell.arch,
            init: cfg.init,
            scheme: cfg.scheme,
            sigma: cell.sigma,
            sim: cfg.sim,
            trained: cfg.trained,
            target: cfg.target(),
            seed: replicate,
            auroc: None,
            best_err: None,
            fpr: None,
            fnr: None,
            acc_noisy: None,
            acc_clean: None,
            bound: None,
            opnorm_sq: None,
            h_label: None,
            h_feature: None,
            fs_auroc: None,
            ms_elapsed: 0,
            status: "ok".into(),
        }
    }

    /// Runs one (cell, replicate). Failures become an error row rather than an `Err`.
    pub fn run_cell(&self, cell: &Cell, replicate: usize) -> ExperimentRow {
        let start = Instant::now();
        let mut row = self.blank_row(cell, replicate);
        if let Err(e) = self.fill_row(cell, replicate, &mut row) {
            let blank = self.blank_row(cell, replicate);
            row = ExperimentRow {
                status: format!("error: {e}"),
                ..blank
            };
        }
        row.ms_elapsed = start.elapsed().as_millis();
        row
    }

    fn fill_row(&self, cell: &Cell, replicate: usize, row: &mut ExperimentRow) -> Result<()> {
        let cfg = &self.config;
        let key = cell.key(cfg.gen, cfg);
        let inst = self.instance(cell, replicate)?;
        let weights = init_weights(
            cell.arch,
            inst.features.cols(),
            cell.d,
            cell.depth,
            cfg.init,
            self.seed(&key, "weights", replicate),
        )?;
        let mode = cfg.mode_for(cell);
        let nag = if mode == Mode::Nag {
            default_train_encoder(Mode::Nag, cell.sigma)
        } else {
            NagConfig::standard()
        };

        let (weights, noise_seed) = if cfg.trained {
            let bundle = self.bundle.as_ref().ok_or_else(|| Error::Config("training needs a bundle".into()))?;
            let train_seed = self.seed(&key, "train", replicate);
            let tc = TrainConfig {
                epochs: cfg.epochs,
                adam: AdamConfig {
                    learning_rate: cfg.learning_rate,
                    ..AdamConfig::default()
                },
                scheme: cfg.scheme,
                encoder: nag,
                init: cfg.init,
                seed: train_seed,
            };
            let head = ClassifierHead::init(cell.d, bundle.classes, self.seed(&key, "head", replicate));
            let out = train_from(bundle, weights, head, &tc)?;
            row.acc_noisy = Some(out.test_accuracy);
            row.acc_clean = Some(out.test_accuracy_clean);
            (out.weights, eval_seed(train_seed))
        } else {
            (weights, self.seed(&key, "noise", replicate))
        };

        let h = inference_representations(&inst.graph, &inst.features, &weights, &nag, noise_seed)?;

        let (victim, h_victim, x_victim) = match cfg.target() {
            Target::FullGraph => (inst.graph.clone(), h, inst.features.clone()),
            Target::TestSubgraph => {
                let mask: NodeSubset = match &self.bundle {
                    Some(b) => b.mask(TEST)?.clone(),
                    None => return Err(Error::Config("test-subgraph target needs a bundle with a test mask".into())),
                };
                let (sub, _) = inst.graph.induced_subgraph(&mask)?;
                (sub, h.select_rows(mask.ids()), inst.features.select_rows(mask.ids()))
            }
        };

        let scores = score_pairs(&h_victim, &victim, cfg.sim)?;
        row.auroc = auroc(&scores).ok();
        let best = best_threshold(&scores);
        if best.defined {
            row.best_err = finite(best.err);
            row.fpr = finite(best.fpr);
            row.fnr = finite(best.fnr);
        }

        if cell.arch != ArchKind::Linear && mode == Mode::Nag {
            let report = nag_bound(&weights, cell.sigma)?;
            row.bound = Some(report.bound);
            row.opnorm_sq = Some(report.op_norm_sq_sum);
        }
        if let Some(labels) = &inst.labels {
            row.h_label = label_homophily(&inst.graph, labels).ok();
        }
        row.h_feature = feature_homophily(&inst.graph, &inst.features).ok();
        if cfg.baseline {
            row.fs_auroc = auroc(&feature_baseline(&x_victim, &victim)?).ok();
        }
        Ok(())
    }

    /// Every (cell, replicate) in grid order.
    pub fn run_all(&self) -> Result<Vec<ExperimentRow>> {
        let jobs: Vec<(Cell, usize)> = self
            .config
            .cells()
            .into_iter()
            .flat_map(|c| (0..self.config.seeds).map(move |r| (c, r)))
            .collect();
        let run = || jobs.par_iter().map(|(c, r)| self.run_cell(c, *r)).collect::<Vec<_>>();
        match self.config.threads {
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(run))
            }
            None => Ok(run()),
        }
    }

    /// Runs the sweep, writes the CSV and returns per-cell summaries.
    pub fn run_sweep(&self, out: &Path) -> Result<Vec<CellSummary>> {
        let rows = self.run_all()?;
        let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
        write_rows(file, &rows)?;
        Ok(summarize(&rows, self.config.seeds))
    }
}

pub fn write_rows<W: Write>(w: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CSV_HEADER)?;
    for row in rows {
        csv.write_record(row.record())?;
    }
    csv.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })
}

/// Mean and sample standard deviation of one metric over a cell's successful rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, count: v.len() })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    /// Grid coordinates as they appear in the CSV.
    pub label: String,
    pub rows: usize,
    pub errors: usize,
    pub auroc: Option<Stat>,
    pub best_err: Option<Stat>,
    pub acc_noisy: Option<Stat>,
}

impl fmt::Display for CellSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |s: &Option<Stat>| s.map_or_else(|| NA.to_string(), |s| s.to_string());
        write!(
            f,
            "{}  auroc={}  best_err={}  acc={}  ({} rows, {} errors)",
            self.label,
            show(&self.auroc),
            show(&self.best_err),
            show(&self.acc_noisy),
            self.rows,
            self.errors
        )
    }
}

/// Groups consecutive runs of `seeds` rows (one cell each) and aggregates.
pub fn summarize(rows: &[ExperimentRow], seeds: usize) -> Vec<CellSummary> {
    rows.chunks(seeds.max(1))
        .map(|chunk| {
            let first = &chunk[0];
            let label = first.record()[..14].join(",");
            let ok: Vec<&ExperimentRow> = chunk.iter().filter(|r| r.is_ok()).collect();
            CellSummary {
                label,
                rows: chunk.len(),
                errors: chunk.len() - ok.len(),
                auroc: Stat::of(ok.iter().filter_map(|r| r.auroc)),
                best_err: Stat::of(ok.iter().filter_map(|r| r.best_err)),
                acc_noisy: Stat::of(ok.iter().filter_map(|r| r.acc_noisy)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
        gen = "er"
        n = 40
        d = 16
        L = [1, 2]
        arch = ["linear", "gcn"]
        init = "he"
        seeds = 2
        baseline = false
    "#;

    #[test]
    fn config_parses_scalars_and_lists() {
        let cfg = ExperimentConfig::from_toml(TINY).unwrap();
        assert_eq!(cfg.n, vec![40]);
        assert_eq!(cfg.depth, vec![1, 2]);
        assert_eq!(cfg.arch, vec![ArchKind::Linear, ArchKind::Gcn]);
        assert_eq!(cfg.seeds, 2);
        assert_eq!(cfg.cells().len(), 4);
        assert!(ExperimentConfig::from_toml("gen = \"er\"\nn = 4\nd = 2\nL = 1\narch = \"gcn\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("gen = \"er\"\nd = 2\nL = 1\narch = \"gcn\"").is_err());
        assert!(ExperimentConfig::from_toml("gen = \"er\"\nn = 4\nd = 2\nL = 1\narch = \"gcn\"\nseeds = 0").is_err());
    }

    #[test]
    fn rows_per_cell_and_seed() {
        let exp = Experiment::new(ExperimentConfig::from_toml(TINY).unwrap()).unwrap();
        let rows = exp.run_all().unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.is_ok()), "{:?}", rows.iter().map(|r| &r.status).collect::<Vec<_>>());
        assert_eq!(rows[0].seed, 0);
        assert_eq!(rows[1].seed, 1);
        // the graph is shared across architectures for the same replicate
        assert_eq!(rows[0].h_feature, rows[2].h_feature);
        let summary = summarize(&rows, 2);
        assert_eq!(summary.len(), 4);
        assert_eq!(summary[0].auroc.unwrap().count, 2);
    }

    #[test]
    fn errors_become_rows() {
        let text = "gen = \"er\"\nn = 10\nd = 4\nL = 1\narch = \"linear\"\ninit = \"identity\"\nmode = \"nag\"\nsigma = 1.0\nseeds = 1";
        let exp = Experiment::new(ExperimentConfig::from_toml(text).unwrap()).unwrap();
        let rows = exp.run_all().unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].status.starts_with("error:"));
        assert_eq!(rows[0].auroc, None);
        assert_eq!(summarize(&rows, 1)[0].errors, 1);
    }

    #[test]
    fn adding_a_cell_keeps_other_rows() {
        let small = Experiment::new(ExperimentConfig::from_toml(TINY).unwrap()).unwrap();
        let wider = Experiment::new(
            ExperimentConfig::from_toml(&TINY.replace("[\"linear\", \"gcn\"]", "[\"linear\", \"gin\", \"gcn\"]")).unwrap(),
        )
        .unwrap();
        let a = small.run_all().unwrap();
        let b = wider.run_all().unwrap();
        let strip = |r: &ExperimentRow| ExperimentRow { ms_elapsed: 0, ..r.clone() };
        let gcn_a: Vec<_> = a.iter().filter(|r| r.arch == ArchKind::Gcn).map(strip).collect();
        let gcn_b: Vec<_> = b.iter().filter(|r| r.arch == ArchKind::Gcn).map(strip).collect();
        assert_eq!(gcn_a, gcn_b);
    }
}
