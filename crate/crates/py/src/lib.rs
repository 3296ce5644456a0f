//! Python bindings: graphs, generators, encoders, the similarity attack,
//! privacy bounds, training and sweeps. Matrices cross the boundary as
//! lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sera_lab::attack::{self as atk, ScoreSet, SimilarityKind};
use sera_lab::bundle::load_bundle;
use sera_lab::defense;
use sera_lab::encoders::{self, ArchKind, EncoderWeights, InitScheme, Mode, NagConfig};
use sera_lab::experiments::{Experiment, ExperimentConfig};
use sera_lab::generators::{self, ErSpec, SbmSpec};
use sera_lab::graph::Graph;
use sera_lab::matrix::DenseMatrix;
use sera_lab::training::{self, AdamConfig, TrainConfig, TrainScheme};
use sera_lab::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NoConvergence { .. } | Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix: rows differ in length"));
    }
    let n = rows.len();
    DenseMatrix::from_vec(n, cols, rows.concat()).map_err(err)
}

fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self { inner: Graph::from_edges(n, edges).map_err(err)? })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees()
    }

    fn neighbors(&self, v: usize) -> PyResult<Vec<usize>> {
        if v >= self.inner.node_count() {
            return Err(PyValueError::new_err(format!("node {v} out of range")));
        }
        Ok(self.inner.neighbors(v).to_vec())
    }

    fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.inner.node_count() && v < self.inner.node_count() && self.inner.has_edge(u, v)
    }

    fn __len__(&self) -> usize {
        self.inner.node_count()
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, m={})", self.inner.node_count(), self.inner.edge_count())
    }
}

/// Encoder parameters: one matrix per layer, attention vectors for GAT.
#[pyclass(name = "Weights", frozen)]
struct PyWeights {
    inner: EncoderWeights,
}

#[pymethods]
impl PyWeights {
    #[staticmethod]
    #[pyo3(signature = (arch, input_dim, d, depth, init = "he", seed = 0))]
    fn init(arch: &str, input_dim: usize, d: usize, depth: usize, init: &str, seed: u64) -> PyResult<Self> {
        let inner = encoders::init_weights(parse(arch)?, input_dim, d, depth, parse::<InitScheme>(init)?, seed)
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// Weights from explicit layer matrices (no attention parameters).
    #[staticmethod]
    #[pyo3(signature = (arch, layers, depth = None))]
    fn from_layers(arch: &str, layers: Vec<Vec<Vec<f64>>>, depth: Option<usize>) -> PyResult<Self> {
        let arch: ArchKind = parse(arch)?;
        let mats = layers.into_iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        let inner = if arch == ArchKind::Linear {
            let [w] = <[DenseMatrix; 1]>::try_from(mats)
                .map_err(|_| PyValueError::new_err("the linear model takes exactly one matrix"))?;
            EncoderWeights::linear(w, depth.unwrap_or(1))
        } else {
            EncoderWeights::new(arch, mats, Vec::new())
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn arch(&self) -> &'static str {
        self.inner.arch.name()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn layers(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.layers.iter().map(to_rows).collect()
    }

    fn op_norms(&self) -> PyResult<Vec<f64>> {
        self.inner.op_norms().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Weights(arch={}, depth={}, {}→{})",
            self.inner.arch,
            self.inner.depth,
            self.inner.input_dim(),
            self.inner.output_dim()
        )
    }
}

#[pyclass(name = "AttackReport", frozen, get_all)]
struct PyAttackReport {
    pairs: usize,
    positives: usize,
    auroc: f64,
    best_err: f64,
    fpr: f64,
    fnr: f64,
    threshold: f64,
}

#[pymethods]
impl PyAttackReport {
    fn __repr__(&self) -> String {
        format!(
            "AttackReport(pairs={}, positives={}, auroc={:.4}, best_err={:.4}, threshold={:.4})",
            self.pairs, self.positives, self.auroc, self.best_err, self.threshold
        )
    }
}

fn report(s: &ScoreSet) -> PyResult<PyAttackReport> {
    let best = atk::best_threshold(s);
    Ok(PyAttackReport {
        pairs: s.len(),
        positives: s.positives(),
        auroc: atk::auroc(s).map_err(err)?,
        best_err: best.err,
        fpr: best.fpr,
        fnr: best.fnr,
        threshold: best.threshold,
    })
}

#[pyclass(name = "BoundReport", frozen, get_all)]
struct PyBoundReport {
    bound: f64,
    constant: f64,
    op_norm_sq_sum: f64,
    sigma: f64,
    vacuous: bool,
}

#[pymethods]
impl PyBoundReport {
    fn __repr__(&self) -> String {
        format!(
            "BoundReport(bound={:.6}, C={}, op_norm_sq_sum={:.6}, sigma={})",
            self.bound, self.constant, self.op_norm_sq_sum, self.sigma
        )
    }
}

#[pyclass(name = "TrainResult", frozen, get_all)]
struct PyTrainResult {
    weights: Py<PyWeights>,
    losses: Vec<f64>,
    train_accuracy: f64,
    test_accuracy: f64,
    test_accuracy_clean: f64,
}

#[pyfunction]
#[pyo3(signature = (n, p = None, seed = 0))]
fn gen_er(n: usize, p: Option<f64>, seed: u64) -> PyResult<PyGraph> {
    let spec = p.map_or_else(|| ErSpec::sparse(n), |p| ErSpec { n, p });
    Ok(PyGraph { inner: generators::gen_er(spec, seed).map_err(err)? })
}

/// Returns the graph and the block of every node.
#[pyfunction]
#[pyo3(signature = (n, k, p, q, seed = 0))]
fn gen_sbm(n: usize, k: usize, p: f64, q: f64, seed: u64) -> PyResult<(PyGraph, Vec<usize>)> {
    let (g, labels) = generators::gen_sbm(SbmSpec { n, k, p, q }, seed).map_err(err)?;
    Ok((PyGraph { inner: g }, labels))
}

#[pyfunction]
#[pyo3(signature = (n, d, seed = 0))]
fn gen_features(n: usize, d: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&generators::gen_features(n, d, seed).map_err(err)?))
}

/// Node representations. `sigma > 0` selects the noisy mode unless `mode` says otherwise.
#[pyfunction]
#[pyo3(signature = (graph, features, weights, sigma = 0.0, mode = None, seed = 0))]
fn encode(
    py: Python<'_>,
    graph: &PyGraph,
    features: Vec<Vec<f64>>,
    weights: &PyWeights,
    sigma: f64,
    mode: Option<&str>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = to_matrix(features)?;
    let mode = match mode {
        Some(m) => parse(m)?,
        None if sigma > 0.0 => Mode::Nag,
        None => Mode::Standard,
    };
    let cfg = NagConfig { mode, sigma, ..NagConfig::default() };
    let out = py
        .detach(|| encoders::encode(&graph.inner, &x, &weights.inner, &cfg, seed))
        .map_err(err)?;
    Ok(to_rows(&out.h))
}

/// Scores every node pair by similarity and summarizes the best threshold test.
#[pyfunction]
#[pyo3(signature = (reps, graph, sim = "cos"))]
fn attack(py: Python<'_>, reps: Vec<Vec<f64>>, graph: &PyGraph, sim: &str) -> PyResult<PyAttackReport> {
    let h = to_matrix(reps)?;
    let kind: SimilarityKind = parse(sim)?;
    let s = py.detach(|| atk::score_pairs(&h, &graph.inner, kind)).map_err(err)?;
    report(&s)
}

/// Metrics for an explicit list of scores and edge indicators.
#[pyfunction]
fn attack_scores(scores: Vec<f64>, truth: Vec<bool>) -> PyResult<PyAttackReport> {
    report(&ScoreSet::from_scores(scores, truth).map_err(err)?)
}

/// `(fpr, fnr, err)` of the test that flags scores ≥ `tau`.
#[pyfunction]
fn rates(scores: Vec<f64>, truth: Vec<bool>, tau: f64) -> PyResult<(f64, f64, f64)> {
    let m = atk::rates(&ScoreSet::from_scores(scores, truth).map_err(err)?, tau);
    Ok((m.fpr, m.fnr, m.err))
}

#[pyfunction]
fn label_homophily(graph: &PyGraph, labels: Vec<usize>) -> PyResult<f64> {
    atk::label_homophily(&graph.inner, &labels).map_err(err)
}

#[pyfunction]
fn feature_homophily(graph: &PyGraph, features: Vec<Vec<f64>>) -> PyResult<f64> {
    atk::feature_homophily(&graph.inner, &to_matrix(features)?).map_err(err)
}

#[pyfunction]
fn nag_bound(weights: &PyWeights, sigma: f64) -> PyResult<PyBoundReport> {
    let r = defense::nag_bound(&weights.inner, sigma).map_err(err)?;
    Ok(PyBoundReport {
        bound: r.bound,
        constant: r.constant,
        op_norm_sq_sum: r.op_norm_sq_sum,
        sigma: r.sigma,
        vacuous: r.vacuous,
    })
}

#[pyfunction]
fn bound_formula(constant: f64, op_norm_sq_sum: f64, sigma: f64) -> f64 {
    defense::bound_formula(constant, op_norm_sq_sum, sigma)
}

#[pyfunction]
fn edge_rr_bound(epsilon: f64) -> f64 {
    defense::edge_rr_bound(epsilon)
}

#[pyfunction]
#[pyo3(signature = (graph, epsilon, seed = 0))]
fn edge_rr(py: Python<'_>, graph: &PyGraph, epsilon: f64, seed: u64) -> PyResult<PyGraph> {
    let adj = py.detach(|| defense::edge_rr(&graph.inner, epsilon, seed)).map_err(err)?;
    Ok(PyGraph { inner: adj.to_graph() })
}

/// Full-batch training on a bundle directory.
#[pyfunction]
#[pyo3(signature = (
    bundle, arch = "gcn", d = 128, depth = 2, epochs = 1000, lr = 1e-3, sigma = 0.0,
    scheme = "unconstrained", init = "he", seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    bundle: PathBuf,
    arch: &str,
    d: usize,
    depth: usize,
    epochs: usize,
    lr: f64,
    sigma: f64,
    scheme: &str,
    init: &str,
    seed: u64,
) -> PyResult<PyTrainResult> {
    let arch: ArchKind = parse(arch)?;
    let mode = if arch == ArchKind::Linear { Mode::Standard } else { Mode::Nag };
    let cfg = TrainConfig {
        epochs,
        adam: AdamConfig { learning_rate: lr, ..AdamConfig::default() },
        scheme: parse::<TrainScheme>(scheme)?,
        encoder: training::default_train_encoder(mode, sigma),
        init: parse(init)?,
        seed,
    };
    let out = py
        .detach(|| {
            let (b, _) = load_bundle(&bundle)?;
            training::train(&b, arch, d, depth, &cfg)
        })
        .map_err(err)?;
    Ok(PyTrainResult {
        weights: Py::new(py, PyWeights { inner: out.weights })?,
        losses: out.losses,
        train_accuracy: out.train_accuracy,
        test_accuracy: out.test_accuracy,
        test_accuracy_clean: out.test_accuracy_clean,
    })
}

/// Runs a TOML sweep, writes the CSV and returns one summary line per cell.
#[pyfunction]
fn run_sweep(py: Python<'_>, config: PathBuf, out: PathBuf) -> PyResult<Vec<String>> {
    let summaries = py
        .detach(|| {
            let cfg = ExperimentConfig::load(&config)?;
            Experiment::new(cfg)?.run_sweep(&out)
        })
        .map_err(err)?;
    Ok(summaries.iter().map(ToString::to_string).collect())
}

#[pymodule]
pub fn sera(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyAttackReport>()?;
    m.add_class::<PyBoundReport>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(gen_er, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sbm, m)?)?;
    m.add_function(wrap_pyfunction!(gen_features, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(attack_scores, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(label_homophily, m)?)?;
    m.add_function(wrap_pyfunction!(feature_homophily, m)?)?;
    m.add_function(wrap_pyfunction!(nag_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bound_formula, m)?)?;
    m.add_function(wrap_pyfunction!(edge_rr_bound, m)?)?;
    m.add_function(wrap_pyfunction!(edge_rr, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
