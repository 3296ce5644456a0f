//! Privacy lower bounds for noisy aggregation and edge randomized response,
//! plus a Monte-Carlo estimate of the per-edge testing error they bound.

use crate::attack::{similarity, SimilarityKind};
use crate::encoders::{encode, ArchKind, EncoderWeights, Mode, NagConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::rng::{self, uniform};

/// Largest graph `edge_rr` will densify.
pub const EDGE_RR_MAX_NODES: usize = 20_000;

/// Architecture constant in the noisy-aggregation bound.
pub fn arch_constant(arch: ArchKind) -> Result<f64> {
    match arch {
        ArchKind::Gcn | ArchKind::MeanSage | ArchKind::Gin => Ok(1.0),
        ArchKind::Gat | ArchKind::MaxSage => Ok(4.0),
        ArchKind::Linear => Err(Error::Unsupported(
            "the linear model has no noisy-aggregation bound".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub bound: f64,
    pub constant: f64,
    /// `Σ_l ‖W_l‖²_op`
    pub op_norm_sq_sum: f64,
    pub sigma: f64,
    /// Set when `σ = 0`: the bound degenerates to 0.
    pub vacuous: bool,
}

/// `1 - √(1 - exp(-C · S / σ²))`.
pub fn bound_formula(constant: f64, op_norm_sq_sum: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let e = (-constant * op_norm_sq_sum / (sigma * sigma)).exp();
    (1.0 - (1.0 - e).sqrt()).clamp(0.0, 1.0)
}

/// Lower bound on `P(Â=1 | A=0) + P(Â=0 | A=1)` for any edge under noisy aggregation.
pub fn nag_bound(weights: &EncoderWeights, sigma: f64) -> Result<BoundReport> {
    let constant = arch_constant(weights.arch)?;
    if sigma < 0.0 || sigma.is_nan() {
        return Err(Error::Spec(format!("sigma={sigma} must be non-negative")));
    }
    let op_norm_sq_sum: f64 = weights.op_norms()?.iter().map(|s| s * s).sum();
    Ok(BoundReport {
        bound: bound_formula(constant, op_norm_sq_sum, sigma),
        constant,
        op_norm_sq_sum,
        sigma,
        vacuous: sigma == 0.0,
    })
}

/// `1 - √(1 - e^{-ε})`.
pub fn edge_rr_bound(epsilon: f64) -> f64 {
    1.0 - (1.0 - (-epsilon).exp()).sqrt()
}

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseAdjacency {
    n: usize,
    bits: Vec<bool>,
}

impl DenseAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.node_count();
        let mut bits = vec![false; n * n];
        for (u, v) in g.edges() {
            bits[u * n + v] = true;
            bits[v * n + u] = true;
        }
        Self { n, bits }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }

    pub fn to_graph(&self) -> Graph {
        let mut pairs = Vec::new();
        for u in 0..self.n {
            for v in u + 1..self.n {
                if self.get(u, v) {
                    pairs.push((u, v));
                }
            }
        }
        Graph::from_sorted_unique_pairs(self.n, &pairs)
    }
}

/// Randomized response on every unordered pair: keep with probability
/// `e^ε / (1 + e^ε)`, flip otherwise.
pub fn edge_rr(g: &Graph, epsilon: f64, seed: u64) -> Result<DenseAdjacency> {
    let n = g.node_count();
    if n > EDGE_RR_MAX_NODES {
        return Err(Error::Unsupported(format!(
            "edge randomized response densifies the graph; {n} nodes exceeds {EDGE_RR_MAX_NODES}"
        )));
    }
    if epsilon < 0.0 || epsilon.is_nan() {
        return Err(Error::Spec(format!("epsilon={epsilon} must be non-negative")));
    }
    let flip = 1.0 / (1.0 + epsilon.exp());
    let mut adj = DenseAdjacency::from_graph(g);
    let mut rng = rng::stream(seed);
    for u in 0..n {
        for v in u + 1..n {
            if uniform(&mut rng) < flip {
                let b = !adj.bits[u * n + v];
                adj.bits[u * n + v] = b;
                adj.bits[v * n + u] = b;
            }
        }
    }
    Ok(adj)
}

/// Encoder under test for [`empirical_edge_error`].
pub struct EncoderSetup<'a> {
    pub features: &'a DenseMatrix,
    pub weights: &'a EncoderWeights,
    pub config: NagConfig,
}

/// Smallest total error of a threshold test separating two score samples:
/// `min_τ [#(absent ≥ τ)/|absent| + #(present < τ)/|present|]`.
pub fn min_total_error(absent: &[f64], present: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = absent
        .iter()
        .map(|&s| (s, false))
        .chain(present.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (na, np) = (absent.len() as f64, present.len() as f64);
    // τ = +∞: nothing flagged.
    let mut best = 1.0;
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let tau = all[i].0;
        while i < all.len() && all[i].0 == tau {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let err = fp as f64 / na + (present.len() - tp) as f64 / np;
        best = f64::min(best, err);
    }
    best
}

/// Monte-Carlo estimate of the best threshold test's total error for one
/// pair, comparing encodings with the edge absent and present.
pub fn empirical_edge_error(
    g: &Graph,
    pair: (usize, usize),
    setup: &EncoderSetup<'_>,
    sim: SimilarityKind,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    empirical_toggle_error(g, pair, pair, setup, sim, trials, seed)
}

/// Like [`empirical_edge_error`], but the two worlds differ in `toggle`
/// while the score is read off `pair`. Toggling an edge outside the pair's
/// receptive field gives identically distributed worlds.
pub fn empirical_toggle_error(
    g: &Graph,
    pair: (usize, usize),
    toggle: (usize, usize),
    setup: &EncoderSetup<'_>,
    sim: SimilarityKind,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::Spec(format!("need at least 100 trials, got {trials}")));
    }
    if setup.config.mode != Mode::Nag || setup.config.sigma <= 0.0 {
        return Err(Error::Unsupported(
            "estimating edge error needs noisy aggregation with sigma > 0".into(),
        ));
    }
    let (u, v) = pair;
    let (a, b) = toggle;
    let worlds = [g.with_edge(a, b, false)?, g.with_edge(a, b, true)?];
    let mut scores = [Vec::with_capacity(trials), Vec::with_capacity(trials)];
    for t in 0..trials {
        for (w, world) in worlds.iter().enumerate() {
            let noise_seed = rng::mix(seed, t as u64, w as u64);
            let h = encode(world, setup.features, setup.weights, &setup.config, noise_seed)?.h;
            scores[w].push(similarity(sim, h.row(u), h.row(v))?.value);
        }
    }
    Ok(min_total_error(&scores[0], &scores[1]))
}
