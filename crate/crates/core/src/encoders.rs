//! Node encoders: the linear propagation model and five message-passing
//! architectures, each runnable raw ("standard") or with noisy aggregation.
//!
//! Noisy aggregation scales every incoming representation to unit norm
//! before the layer weight, aggregates over the closed neighbourhood
//! `N(v) ∪ {v}`, and adds `N(0, σ² I)` to the aggregate before the
//! activation. Standard mode skips both the normalization and the noise.
//!
//! Weights use the row-vector convention: a layer maps `h (1×in)` to
//! `h · W (1×out)`, so every `W_l` is stored `in × out`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{dot, norm, DenseMatrix};
use crate::rng::{self, Gaussian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Linear,
    Gcn,
    MeanSage,
    MaxSage,
    Gin,
    Gat,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] = [
        ArchKind::Linear,
        ArchKind::Gcn,
        ArchKind::MeanSage,
        ArchKind::MaxSage,
        ArchKind::Gin,
        ArchKind::Gat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Linear => "linear",
            ArchKind::Gcn => "gcn",
            ArchKind::MeanSage => "mean_sage",
            ArchKind::MaxSage => "max_sage",
            ArchKind::Gin => "gin",
            ArchKind::Gat => "gat",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" | "lin" => ArchKind::Linear,
            "gcn" => ArchKind::Gcn,
            "mean_sage" | "sage" | "mean" => ArchKind::MeanSage,
            "max_sage" | "max" => ArchKind::MaxSage,
            "gin" | "sum" => ArchKind::Gin,
            "gat" | "attention" => ArchKind::Gat,
            other => return Err(Error::Unsupported(format!("unknown architecture {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative, taking the ReLU subgradient at 0 to be 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "none" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Unsupported(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    Nag,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::Nag => "nag",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Mode::Standard),
            "nag" | "noisy" => Ok(Mode::Nag),
            other => Err(Error::Unsupported(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NagConfig {
    pub mode: Mode,
    /// Noise standard deviation; ignored in standard mode.
    pub sigma: f64,
    /// Activation after every layer but the last.
    pub activation: Activation,
    pub final_activation: Activation,
    /// Rows with a smaller norm bypass normalization (and are counted).
    pub norm_epsilon: f64,
    pub leaky_slope: f64,
}

impl Default for NagConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Standard,
            sigma: 0.0,
            activation: Activation::Relu,
            final_activation: Activation::Identity,
            norm_epsilon: 1e-12,
            leaky_slope: 0.2,
        }
    }
}

impl NagConfig {
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn nag(sigma: f64) -> Self {
        Self {
            mode: Mode::Nag,
            sigma,
            ..Self::default()
        }
    }

    pub fn with_activations(mut self, hidden: Activation, last: Activation) -> Self {
        self.activation = hidden;
        self.final_activation = last;
        self
    }

    fn noise_sigma(&self) -> f64 {
        match self.mode {
            Mode::Nag => self.sigma,
            Mode::Standard => 0.0,
        }
    }
}

/// GAT scoring vectors for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub src: Vec<f64>,
    pub dst: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            src: vec![0.0; d],
            dst: vec![0.0; d],
        }
    }
}

/// Encoder parameters.
///
/// Message-passing architectures hold one matrix per layer. The linear
/// model holds a single effective matrix applied after `depth` propagation
/// steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub arch: ArchKind,
    pub layers: Vec<DenseMatrix>,
    pub attention: Vec<AttentionParams>,
    pub depth: usize,
}

impl EncoderWeights {
    pub fn new(arch: ArchKind, layers: Vec<DenseMatrix>, attention: Vec<AttentionParams>) -> Result<Self> {
        let depth = layers.len();
        let w = Self {
            arch,
            layers,
            attention,
            depth,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn linear(w: DenseMatrix, depth: usize) -> Result<Self> {
        let w = Self {
            arch: ArchKind::Linear,
            layers: vec![w],
            attention: Vec::new(),
            depth,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.layers.is_empty() {
            return Err(Error::Dimension("encoder needs at least one layer".into()));
        }
        if self.arch == ArchKind::Linear {
            if self.layers.len() != 1 {
                return Err(Error::Dimension(
                    "linear encoder holds exactly one effective matrix".into(),
                ));
            }
        } else if self.layers.len() != self.depth {
            return Err(Error::Dimension(format!(
                "depth {} but {} layer matrices",
                self.depth,
                self.layers.len()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Dimension(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].cols(),
                    pair[1].rows()
                )));
            }
        }
        for (l, w) in self.layers.iter().enumerate().skip(1) {
            if w.rows() != w.cols() {
                return Err(Error::Dimension(format!(
                    "hidden layer {l} must be square, got {}x{}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        if self.layers.iter().any(|w| !w.is_finite()) {
            return Err(Error::Dimension("non-finite weight".into()));
        }
        if self.arch == ArchKind::Gat {
            if self.attention.len() != self.layers.len() {
                return Err(Error::Dimension(
                    "GAT needs attention vectors for every layer".into(),
                ));
            }
            for (w, a) in self.layers.iter().zip(&self.attention) {
                if a.src.len() != w.cols() || a.dst.len() != w.cols() {
                    return Err(Error::Dimension("attention vector length".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |w| w.cols())
    }

    /// Operator norms of every encoder layer (the matrices in the privacy bound).
    pub fn op_norms(&self) -> Result<Vec<f64>> {
        self.layers.iter().map(crate::linalg::spectral_norm).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Identity,
    He,
    Product,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(InitScheme::Identity),
            "he" | "kaiming" => Ok(InitScheme::He),
            "product" => Ok(InitScheme::Product),
            other => Err(Error::Unsupported(format!("unknown init scheme {other:?}"))),
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Identity => "identity",
            InitScheme::He => "he",
            InitScheme::Product => "product",
        })
    }
}

fn he_matrix(rows: usize, cols: usize, g: &mut Gaussian<rng::StageRng>) -> DenseMatrix {
    let std = (2.0 / rows as f64).sqrt();
    let mut data = vec![0.0; rows * cols];
    g.fill(&mut data, std);
    DenseMatrix::from_vec(rows, cols, data).expect("sized above")
}

/// Initial encoder weights.
///
/// * `Identity`: every `W_l = I` (needs `input_dim == d`), GAT vectors zero.
/// * `He`: zero-mean Gaussian with std `√(2 / fan_in)`; GAT vectors std `√(2 / d)`.
/// * `Product`: linear model only; the product of `depth` He factors.
pub fn init_weights(
    arch: ArchKind,
    input_dim: usize,
    d: usize,
    depth: usize,
    scheme: InitScheme,
    seed: u64,
) -> Result<EncoderWeights> {
    if d == 0 || input_dim == 0 || depth == 0 {
        return Err(Error::Dimension("d, input_dim and depth must be positive".into()));
    }
    let mut g = rng::gaussian(seed);
    let layer_count = if arch == ArchKind::Linear { 1 } else { depth };
    let layers: Vec<DenseMatrix> = match scheme {
        InitScheme::Identity => {
            if input_dim != d {
                return Err(Error::Dimension(format!(
                    "identity weights need input_dim == d, got {input_dim} and {d}"
                )));
            }
            vec![DenseMatrix::identity(d); layer_count]
        }
        InitScheme::He => (0..layer_count)
            .map(|l| he_matrix(if l == 0 { input_dim } else { d }, d, &mut g))
            .collect(),
        InitScheme::Product => {
            if arch != ArchKind::Linear {
                return Err(Error::Unsupported(format!(
                    "product initialization is defined for the linear model only, not {arch}"
                )));
            }
            let mut w = he_matrix(input_dim, d, &mut g);
            for _ in 1..depth {
                w = w.matmul(&he_matrix(d, d, &mut g))?;
            }
            vec![w]
        }
    };
    let attention = if arch == ArchKind::Gat {
        (0..layer_count)
            .map(|_| match scheme {
                InitScheme::He => {
                    let std = (2.0 / d as f64).sqrt();
                    let mut a = AttentionParams::zeros(d);
                    g.fill(&mut a.src, std);
                    g.fill(&mut a.dst, std);
                    a
                }
                _ => AttentionParams::zeros(d),
            })
            .collect()
    } else {
        Vec::new()
    };
    let w = EncoderWeights {
        arch,
        layers,
        attention,
        depth,
    };
    w.validate()?;
    Ok(w)
}

/// One step of `(D + I)^{-1} (A + I)` applied to the rows of `x`.
pub fn propagate_mean(g: &Graph, x: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for v in 0..g.node_count() {
        let row = out.row_mut(v);
        row.copy_from_slice(x.row(v));
        for &u in g.neighbors(v) {
            for (o, xu) in row.iter_mut().zip(x.row(u)) {
                *o += xu;
            }
        }
        let scale = 1.0 / (g.degree(v) as f64 + 1.0);
        row.iter_mut().for_each(|o| *o *= scale);
    }
    out
}

/// `((D + I)^{-1} (A + I))^L X W` via `depth` sparse propagations of `X`.
pub fn encode_linear(g: &Graph, x: &DenseMatrix, w: &DenseMatrix, depth: usize) -> Result<DenseMatrix> {
    if x.rows() != g.node_count() {
        return Err(Error::Dimension(format!(
            "features have {} rows for {} nodes",
            x.rows(),
            g.node_count()
        )));
    }
    if x.cols() != w.rows() {
        return Err(Error::Dimension(format!(
            "features have {} columns but W has {} rows",
            x.cols(),
            w.rows()
        )));
    }
    if depth == 0 {
        return Err(Error::Dimension("depth must be at least 1".into()));
    }
    let mut h = propagate_mean(g, x);
    for _ in 1..depth {
        h = propagate_mean(g, &h);
    }
    h.matmul(w)
}

/// Closed neighbourhoods `N(v) ∪ {v}` in ascending order, CSR layout.
pub(crate) struct ClosedNeighborhoods {
    pub offsets: Vec<usize>,
    pub nodes: Vec<usize>,
}

impl ClosedNeighborhoods {
    pub fn new(g: &Graph) -> Self {
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut nodes = Vec::with_capacity(2 * g.edge_count() + n);
        offsets.push(0);
        for v in 0..n {
            let nb = g.neighbors(v);
            let split = nb.partition_point(|&u| u < v);
            nodes.extend_from_slice(&nb[..split]);
            nodes.push(v);
            nodes.extend_from_slice(&nb[split..]);
            offsets.push(nodes.len());
        }
        Self { offsets, nodes }
    }

    #[inline]
    pub fn range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    #[inline]
    pub fn of(&self, v: usize) -> &[usize] {
        &self.nodes[self.range(v)]
    }
}

/// Everything the backward pass needs from one layer.
pub(crate) struct LayerTrace {
    /// Rows fed to the weight (normalized in NAG mode).
    pub input_hat: DenseMatrix,
    /// `Some(1/‖h_u‖)` for rows that were normalized.
    pub inv_norms: Vec<Option<f64>>,
    pub messages: DenseMatrix,
    pub pre: DenseMatrix,
    pub activation: Activation,
    /// MAX_SAGE: winning source node per output entry.
    pub argmax: Vec<usize>,
    /// GAT: attention weight per closed-neighbourhood slot.
    pub alpha: Vec<f64>,
    /// GAT: score before LeakyReLU per slot.
    pub raw_scores: Vec<f64>,
}

pub struct LayerOutput {
    pub h: DenseMatrix,
    /// Rows left unnormalized because their norm was below `norm_epsilon`.
    pub unnormalized_rows: usize,
}

pub(crate) fn layer_noise(seed: u64, layer: usize, node: usize, d: usize, sigma: f64) -> Vec<f64> {
    let mut g = rng::gaussian(rng::mix(seed, layer as u64 + 1, node as u64));
    let mut out = vec![0.0; d];
    g.fill(&mut out, sigma);
    out
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Forward pass of one message-passing layer; optionally records a trace.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward(
    g: &Graph,
    nbhd: &ClosedNeighborhoods,
    h_in: &DenseMatrix,
    w: &DenseMatrix,
    arch: ArchKind,
    attention: Option<&AttentionParams>,
    activation: Activation,
    cfg: &NagConfig,
    noise: Option<(u64, usize)>,
    keep_trace: bool,
) -> Result<(LayerOutput, Option<LayerTrace>)> {
    let n = g.node_count();
    if h_in.rows() != n {
        return Err(Error::Dimension(format!(
            "layer input has {} rows for {n} nodes",
            h_in.rows()
        )));
    }
    if h_in.cols() != w.rows() {
        return Err(Error::Dimension(format!(
            "layer input width {} does not match weight rows {}",
            h_in.cols(),
            w.rows()
        )));
    }
    if arch == ArchKind::Linear {
        return Err(Error::Unsupported(
            "the linear model has no message-passing layer".into(),
        ));
    }
    let attention = match (arch, attention) {
        (ArchKind::Gat, None) => {
            return Err(Error::Dimension("GAT layer needs attention vectors".into()))
        }
        (ArchKind::Gat, Some(a)) if a.src.len() != w.cols() || a.dst.len() != w.cols() => {
            return Err(Error::Dimension("attention vector length".into()))
        }
        (_, a) => a,
    };

    let mut input_hat = h_in.clone();
    let mut inv_norms = vec![None; n];
    let mut unnormalized_rows = 0;
    if cfg.mode == Mode::Nag {
        for (u, slot) in inv_norms.iter_mut().enumerate() {
            let r = norm(h_in.row(u));
            if r < cfg.norm_epsilon {
                unnormalized_rows += 1;
            } else {
                let k = 1.0 / r;
                input_hat.row_mut(u).iter_mut().for_each(|x| *x *= k);
                *slot = Some(k);
            }
        }
    }

    let messages = input_hat.matmul(w)?;
    let d = w.cols();
    let mut pre = DenseMatrix::zeros(n, d);
    let mut argmax = Vec::new();
    let mut alpha = Vec::new();
    let mut raw_scores = Vec::new();

    match arch {
        ArchKind::MeanSage | ArchKind::Gin | ArchKind::Gcn => {
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|v| 1.0 / ((g.degree(v) as f64) + 1.0).sqrt())
                .collect();
            for v in 0..n {
                let out = pre.row_mut(v);
                for &u in nbhd.of(v) {
                    let c = match arch {
                        ArchKind::MeanSage => 1.0 / (g.degree(v) as f64 + 1.0),
                        ArchKind::Gin => 1.0,
                        _ => inv_sqrt[v] * inv_sqrt[u],
                    };
                    for (o, m) in out.iter_mut().zip(messages.row(u)) {
                        *o += c * m;
                    }
                }
            }
        }
        ArchKind::MaxSage => {
            argmax = vec![0; n * d];
            for v in 0..n {
                let out = pre.row_mut(v);
                out.fill(f64::NEG_INFINITY);
                for &u in nbhd.of(v) {
                    for (k, m) in messages.row(u).iter().enumerate() {
                        // strict comparison keeps the first (smallest-id) maximiser
                        if *m > out[k] {
                            out[k] = *m;
                            argmax[v * d + k] = u;
                        }
                    }
                }
            }
        }
        ArchKind::Gat => {
            let a = attention.expect("checked above");
            let s: Vec<f64> = messages.row_iter().map(|m| dot(&a.src, m)).collect();
            let t: Vec<f64> = messages.row_iter().map(|m| dot(&a.dst, m)).collect();
            alpha = vec![0.0; nbhd.nodes.len()];
            raw_scores = vec![0.0; nbhd.nodes.len()];
            for v in 0..n {
                let range = nbhd.range(v);
                let mut max = f64::NEG_INFINITY;
                for slot in range.clone() {
                    let u = nbhd.nodes[slot];
                    let raw = s[u] + t[v];
                    raw_scores[slot] = raw;
                    max = max.max(leaky(raw, cfg.leaky_slope));
                }
                let mut total = 0.0;
                for slot in range.clone() {
                    let e = (leaky(raw_scores[slot], cfg.leaky_slope) - max).exp();
                    alpha[slot] = e;
                    total += e;
                }
                let out = pre.row_mut(v);
                for slot in range {
                    alpha[slot] /= total;
                    let u = nbhd.nodes[slot];
                    for (o, m) in out.iter_mut().zip(messages.row(u)) {
                        *o += alpha[slot] * m;
                    }
                }
            }
        }
        ArchKind::Linear => unreachable!(),
    }

    let sigma = cfg.noise_sigma();
    if sigma > 0.0 {
        let (seed, layer) = noise.ok_or_else(|| {
            Error::Unsupported("noisy aggregation needs a noise seed".into())
        })?;
        for v in 0..n {
            let eps = layer_noise(seed, layer, v, d, sigma);
            for (o, e) in pre.row_mut(v).iter_mut().zip(eps) {
                *o += e;
            }
        }
    }

    let mut h = pre.clone();
    h.as_mut_slice().iter_mut().for_each(|x| *x = activation.apply(*x));

    let trace = keep_trace.then(|| LayerTrace {
        input_hat,
        inv_norms,
        messages,
        pre,
        activation,
        argmax,
        alpha,
        raw_scores,
    });
    Ok((
        LayerOutput {
            h,
            unnormalized_rows,
        },
        trace,
    ))
}

/// One message-passing layer.
///
/// `noise` is `(seed, layer_index)`; node `v` draws its noise from a stream
/// keyed by `(seed, layer_index, v)`, so results do not depend on
/// evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn mp_layer(
    g: &Graph,
    h_in: &DenseMatrix,
    w: &DenseMatrix,
    arch: ArchKind,
    attention: Option<&AttentionParams>,
    activation: Activation,
    cfg: &NagConfig,
    noise: Option<(u64, usize)>,
) -> Result<LayerOutput> {
    let nbhd = ClosedNeighborhoods::new(g);
    layer_forward(g, &nbhd, h_in, w, arch, attention, activation, cfg, noise, false)
        .map(|(out, _)| out)
}

/// Full encoder forward pass.
pub fn encode(
    g: &Graph,
    x: &DenseMatrix,
    weights: &EncoderWeights,
    cfg: &NagConfig,
    seed: u64,
) -> Result<LayerOutput> {
    weights.validate()?;
    if weights.arch == ArchKind::Linear {
        if cfg.mode == Mode::Nag {
            return Err(Error::Unsupported(
                "the linear model has no noisy-aggregation mode".into(),
            ));
        }
        return Ok(LayerOutput {
            h: encode_linear(g, x, &weights.layers[0], weights.depth)?,
            unnormalized_rows: 0,
        });
    }
    let (out, _) = encode_traced(g, x, weights, cfg, seed, false)?;
    Ok(out)
}

pub(crate) fn encode_traced(
    g: &Graph,
    x: &DenseMatrix,
    weights: &EncoderWeights,
    cfg: &NagConfig,
    seed: u64,
    keep_trace: bool,
) -> Result<(LayerOutput, Vec<LayerTrace>)> {
    let nbhd = ClosedNeighborhoods::new(g);
    let last = weights.layers.len() - 1;
    let mut traces = Vec::new();
    let mut unnormalized_rows = 0;
    let mut h = None::<DenseMatrix>;
    for (l, w) in weights.layers.iter().enumerate() {
        let act = if l == last {
            cfg.final_activation
        } else {
            cfg.activation
        };
        let input = h.as_ref().unwrap_or(x);
        let (out, trace) = layer_forward(
            g,
            &nbhd,
            input,
            w,
            weights.arch,
            weights.attention.get(l),
            act,
            cfg,
            Some((seed, l)),
            keep_trace,
        )?;
        unnormalized_rows += out.unnormalized_rows;
        traces.extend(trace);
        h = Some(out.h);
    }
    Ok((
        LayerOutput {
            h: h.expect("at least one layer"),
            unnormalized_rows,
        },
        traces,
    ))
}
