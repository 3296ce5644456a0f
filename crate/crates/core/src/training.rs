//! Full-batch node classification with a linear decoder head.
//!
//! Gradients are derived by hand for each architecture and checked against
//! central finite differences in the test suite. Noise is part of the
//! forward pass and is held fixed within an epoch (one realization per
//! forward/backward pair).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::{DatasetBundle, TEST, TRAIN};
use crate::encoders::{
    encode_linear, encode_traced, init_weights, propagate_mean, Activation, ArchKind,
    AttentionParams, ClosedNeighborhoods, EncoderWeights, InitScheme, LayerTrace, Mode,
    NagConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSubset};
use crate::linalg::SpectralNormalizer;
use crate::matrix::{dot, DenseMatrix};
use crate::rng::{self, mix, stage_seed};

/// Linear decoder: logits = `H · weight`, with `weight` of shape `d × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weight: DenseMatrix,
}

impl ClassifierHead {
    /// Gaussian entries with std `√(1/d)`.
    pub fn init(d: usize, classes: usize, seed: u64) -> Self {
        let mut g = rng::gaussian(seed);
        let mut data = vec![0.0; d * classes];
        g.fill(&mut data, (1.0 / d as f64).sqrt());
        Self {
            weight: DenseMatrix::from_vec(d, classes, data).expect("sized above"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScheme {
    Unconstrained,
    /// Spectrally normalize every encoder layer after each optimizer step.
    Constrained,
}

impl fmt::Display for TrainScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainScheme::Unconstrained => "unconstrained",
            TrainScheme::Constrained => "constrained",
        })
    }
}

impl FromStr for TrainScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unconstrained" => Ok(TrainScheme::Unconstrained),
            "constrained" => Ok(TrainScheme::Constrained),
            other => Err(Error::Unsupported(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub scheme: TrainScheme,
    pub encoder: NagConfig,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            adam: AdamConfig::default(),
            scheme: TrainScheme::Unconstrained,
            encoder: NagConfig::nag(0.0),
            init: InitScheme::He,
            seed: 0,
        }
    }
}

/// First and second moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension("params and grads differ in count".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || m.len() != g.len() {
                return Err(Error::Dimension("parameter and gradient shapes differ".into()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Gradients aligned with [`EncoderWeights`] and [`ClassifierHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseMatrix>,
    pub attention: Vec<AttentionParams>,
    pub head: DenseMatrix,
}

/// Mutable views of every trainable tensor, in a fixed order.
pub fn parameter_slices<'a>(
    weights: &'a mut EncoderWeights,
    head: &'a mut ClassifierHead,
) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = weights.layers.iter_mut().map(|w| w.as_mut_slice()).collect();
    for a in weights.attention.iter_mut() {
        out.push(&mut a.src);
        out.push(&mut a.dst);
    }
    out.push(head.weight.as_mut_slice());
    out
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().map(|w| w.as_slice()).collect();
        for a in &self.attention {
            out.push(&a.src);
            out.push(&a.dst);
        }
        out.push(self.head.as_slice());
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn representations(
    g: &Graph,
    x: &DenseMatrix,
    weights: &EncoderWeights,
    cfg: &NagConfig,
    epoch_seed: u64,
) -> Result<DenseMatrix> {
    Ok(crate::encoders::encode(g, x, weights, cfg, epoch_seed)?.h)
}

/// Logits `enc(G, X) · head` with the noise realization of `epoch_seed`.
pub fn forward_logits(
    g: &Graph,
    x: &DenseMatrix,
    weights: &EncoderWeights,
    head: &ClassifierHead,
    cfg: &NagConfig,
    epoch_seed: u64,
) -> Result<DenseMatrix> {
    representations(g, x, weights, cfg, epoch_seed)?.matmul(&head.weight)
}

fn check_mask(mask: &NodeSubset, n: usize, labels: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::InvalidSubset("empty mask".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if mask.ids().last().is_some_and(|&i| i >= n) {
        return Err(Error::InvalidSubset("mask id out of range".into()));
    }
    Ok(())
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

/// Mean negative log-likelihood over `mask`.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize], mask: &NodeSubset) -> Result<f64> {
    check_mask(mask, logits.rows(), labels)?;
    let mut total = 0.0;
    for &v in mask.ids() {
        let y = labels[v];
        if y >= logits.cols() {
            return Err(Error::Dimension(format!("label {y} with {} classes", logits.cols())));
        }
        total -= log_softmax_row(logits.row(v))[y];
    }
    Ok(total / mask.len() as f64)
}

/// `∂loss/∂logits`: `(softmax − onehot) / |mask|` on masked rows, 0 elsewhere.
fn logits_grad(logits: &DenseMatrix, labels: &[usize], mask: &NodeSubset) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(logits.rows(), logits.cols());
    let scale = 1.0 / mask.len() as f64;
    for &v in mask.ids() {
        let lp = log_softmax_row(logits.row(v));
        let row = out.row_mut(v);
        for (c, (o, l)) in row.iter_mut().zip(lp).enumerate() {
            *o = scale * (l.exp() - if c == labels[v] { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Fraction of `mask` whose argmax logit (lowest index on ties) equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &NodeSubset) -> Result<f64> {
    check_mask(mask, logits.rows(), labels)?;
    let correct = mask
        .ids()
        .iter()
        .filter(|&&v| {
            let row = logits.row(v);
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            best == labels[v]
        })
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

#[inline]
fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

struct LayerGrads {
    weight: DenseMatrix,
    attention: Option<AttentionParams>,
    input: Option<DenseMatrix>,
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    g: &Graph,
    nbhd: &ClosedNeighborhoods,
    trace: &LayerTrace,
    w: &DenseMatrix,
    arch: ArchKind,
    attention: Option<&AttentionParams>,
    cfg: &NagConfig,
    d_out: &DenseMatrix,
    need_input: bool,
) -> Result<LayerGrads> {
    let n = g.node_count();
    let d = w.cols();
    let mut d_pre = d_out.clone();
    for (dp, &p) in d_pre.as_mut_slice().iter_mut().zip(trace.pre.as_slice()) {
        *dp *= trace.activation.derivative(p);
    }

    let mut d_msg = DenseMatrix::zeros(n, d);
    let mut d_att = None;
    match arch {
        ArchKind::MeanSage | ArchKind::Gin | ArchKind::Gcn => {
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|v| 1.0 / ((g.degree(v) as f64) + 1.0).sqrt())
                .collect();
            for v in 0..n {
                let dz = d_pre.row(v).to_vec();
                for &u in nbhd.of(v) {
                    let c = match arch {
                        ArchKind::MeanSage => 1.0 / (g.degree(v) as f64 + 1.0),
                        ArchKind::Gin => 1.0,
                        _ => inv_sqrt[v] * inv_sqrt[u],
                    };
                    for (m, z) in d_msg.row_mut(u).iter_mut().zip(&dz) {
                        *m += c * z;
                    }
                }
            }
        }
        ArchKind::MaxSage => {
            for v in 0..n {
                for k in 0..d {
                    let src = trace.argmax[v * d + k];
                    let val = d_msg.get(src, k) + d_pre.get(v, k);
                    d_msg.set(src, k, val);
                }
            }
        }
        ArchKind::Gat => {
            let a = attention.ok_or_else(|| Error::Dimension("GAT layer needs attention vectors".into()))?;
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            for v in 0..n {
                let range = nbhd.range(v);
                let dz = d_pre.row(v).to_vec();
                let mut d_alpha = Vec::with_capacity(range.len());
                for slot in range.clone() {
                    let u = nbhd.nodes[slot];
                    d_alpha.push(dot(&dz, trace.messages.row(u)));
                    let alpha = trace.alpha[slot];
                    for (m, z) in d_msg.row_mut(u).iter_mut().zip(&dz) {
                        *m += alpha * z;
                    }
                }
                let weighted: f64 = range
                    .clone()
                    .zip(&d_alpha)
                    .map(|(slot, da)| trace.alpha[slot] * da)
                    .sum();
                for (slot, da) in range.zip(&d_alpha) {
                    let de = trace.alpha[slot] * (da - weighted);
                    let dx = de * leaky_grad(trace.raw_scores[slot], cfg.leaky_slope);
                    ds[nbhd.nodes[slot]] += dx;
                    dt[v] += dx;
                }
            }
            let mut grad = AttentionParams::zeros(d);
            for u in 0..n {
                let m = trace.messages.row(u);
                for k in 0..d {
                    grad.src[k] += ds[u] * m[k];
                    grad.dst[k] += dt[u] * m[k];
                }
                let row = d_msg.row_mut(u);
                for k in 0..d {
                    row[k] += ds[u] * a.src[k] + dt[u] * a.dst[k];
                }
            }
            d_att = Some(grad);
        }
        ArchKind::Linear => unreachable!("linear model has no message-passing layers"),
    }

    let weight = trace.input_hat.t_matmul(&d_msg)?;
    let input = if need_input {
        let mut d_hat = d_msg.matmul_t(w)?;
        for (u, inv) in trace.inv_norms.iter().enumerate() {
            if let Some(k) = *inv {
                let h_hat = trace.input_hat.row(u);
                let row = d_hat.row_mut(u);
                let proj = dot(h_hat, row);
                for (r, hh) in row.iter_mut().zip(h_hat) {
                    *r = k * (*r - hh * proj);
                }
            }
        }
        Some(d_hat)
    } else {
        None
    };
    Ok(LayerGrads {
        weight,
        attention: d_att,
        input,
    })
}

/// Loss and exact gradients for one fixed noise realization.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    g: &Graph,
    x: &DenseMatrix,
    labels: &[usize],
    weights: &EncoderWeights,
    head: &ClassifierHead,
    cfg: &NagConfig,
    mask: &NodeSubset,
    epoch_seed: u64,
) -> Result<(f64, Gradients)> {
    weights.validate()?;
    if weights.arch == ArchKind::Linear {
        let propagated = propagate_depth(g, x, weights.depth)?;
        return linear_backward(&propagated, labels, weights, head, cfg, mask);
    }
    let (out, traces) = encode_traced(g, x, weights, cfg, epoch_seed, true)?;
    let logits = out.h.matmul(&head.weight)?;
    let loss = cross_entropy(&logits, labels, mask)?;
    let d_logits = logits_grad(&logits, labels, mask);
    let head_grad = out.h.t_matmul(&d_logits)?;
    let mut d_h = d_logits.matmul_t(&head.weight)?;

    let nbhd = ClosedNeighborhoods::new(g);
    let depth = weights.layers.len();
    let mut layer_grads = vec![DenseMatrix::zeros(0, 0); depth];
    let mut att_grads = vec![AttentionParams::zeros(0); weights.attention.len()];
    for l in (0..depth).rev() {
        let grads = layer_backward(
            g,
            &nbhd,
            &traces[l],
            &weights.layers[l],
            weights.arch,
            weights.attention.get(l),
            cfg,
            &d_h,
            l > 0,
        )?;
        layer_grads[l] = grads.weight;
        if let Some(a) = grads.attention {
            att_grads[l] = a;
        }
        if let Some(d_in) = grads.input {
            d_h = d_in;
        }
    }
    Ok((
        loss,
        Gradients {
            layers: layer_grads,
            attention: att_grads,
            head: head_grad,
        },
    ))
}

fn propagate_depth(g: &Graph, x: &DenseMatrix, depth: usize) -> Result<DenseMatrix> {
    if x.rows() != g.node_count() {
        return Err(Error::Dimension("feature rows must match node count".into()));
    }
    let mut h = propagate_mean(g, x);
    for _ in 1..depth {
        h = propagate_mean(g, &h);
    }
    Ok(h)
}

fn linear_backward(
    propagated: &DenseMatrix,
    labels: &[usize],
    weights: &EncoderWeights,
    head: &ClassifierHead,
    cfg: &NagConfig,
    mask: &NodeSubset,
) -> Result<(f64, Gradients)> {
    if cfg.mode == Mode::Nag {
        return Err(Error::Unsupported(
            "the linear model has no noisy-aggregation mode".into(),
        ));
    }
    let w = &weights.layers[0];
    let h = propagated.matmul(w)?;
    let logits = h.matmul(&head.weight)?;
    let loss = cross_entropy(&logits, labels, mask)?;
    let d_logits = logits_grad(&logits, labels, mask);
    let head_grad = h.t_matmul(&d_logits)?;
    let d_h = d_logits.matmul_t(&head.weight)?;
    let w_grad = propagated.t_matmul(&d_h)?;
    Ok((
        loss,
        Gradients {
            layers: vec![w_grad],
            attention: Vec::new(),
            head: head_grad,
        },
    ))
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// Largest relative error over the compared entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose ±h evaluations took different branches of a max,
    /// ReLU or LeakyReLU; central differences are meaningless there.
    pub skipped: usize,
}

/// Below this magnitude gradients are compared in absolute terms. Central
/// differences with h = 1e-5 carry about ε·|loss|/h ≈ 1e-11 of rounding, so
/// smaller entries cannot be resolved to a relative 1e-4.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Which side of every kink the forward pass landed on.
fn branch_pattern(traces: &[LayerTrace]) -> Vec<usize> {
    let mut out = Vec::new();
    for t in traces {
        out.extend_from_slice(&t.argmax);
        if t.activation != Activation::Identity {
            out.extend(t.pre.as_slice().iter().map(|&z| usize::from(z > 0.0)));
        }
        out.extend(t.raw_scores.iter().map(|&e| usize::from(e > 0.0)));
    }
    out
}

/// Compares analytic gradients with central differences of step `h` on
/// every parameter entry. Relative error is
/// `|a − f| / max(|a|, |f|, GRADIENT_FLOOR)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    g: &Graph,
    x: &DenseMatrix,
    labels: &[usize],
    weights: &EncoderWeights,
    head: &ClassifierHead,
    cfg: &NagConfig,
    mask: &NodeSubset,
    epoch_seed: u64,
    h: f64,
) -> Result<GradientCheck> {
    let (_, grads) = backward(g, x, labels, weights, head, cfg, mask, epoch_seed)?;
    let analytic: Vec<f64> = grads.slices().concat();
    let loss_at = |w: &EncoderWeights, hd: &ClassifierHead| -> Result<(f64, Vec<usize>)> {
        let (h, pattern) = match w.arch {
            ArchKind::Linear => (encode_linear(g, x, &w.layers[0], w.depth)?, Vec::new()),
            _ => {
                let (out, traces) = encode_traced(g, x, w, cfg, epoch_seed, true)?;
                (out.h, branch_pattern(&traces))
            }
        };
        Ok((cross_entropy(&h.matmul(&hd.weight)?, labels, mask)?, pattern))
    };
    let (mut w, mut hd) = (weights.clone(), head.clone());
    let mut report = GradientCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut index = 0;
    let tensors = parameter_slices(&mut w, &mut hd).iter().map(|s| s.len()).collect::<Vec<_>>();
    for (t, len) in tensors.into_iter().enumerate() {
        for j in 0..len {
            let orig = parameter_slices(&mut w, &mut hd)[t][j];
            parameter_slices(&mut w, &mut hd)[t][j] = orig + h;
            let (plus, plus_pattern) = loss_at(&w, &hd)?;
            parameter_slices(&mut w, &mut hd)[t][j] = orig - h;
            let (minus, minus_pattern) = loss_at(&w, &hd)?;
            parameter_slices(&mut w, &mut hd)[t][j] = orig;
            let a = analytic[index];
            index += 1;
            if plus_pattern != minus_pattern {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRADIENT_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: EncoderWeights,
    pub head: ClassifierHead,
    pub losses: Vec<f64>,
    /// Test accuracy with inference-time noise drawn from the evaluation stream.
    pub test_accuracy: f64,
    /// Test accuracy with σ forced to 0.
    pub test_accuracy_clean: f64,
    pub train_accuracy: f64,
    pub epochs: usize,
}

/// Seed for the noise realization used when evaluating a trained model.
pub fn eval_seed(seed: u64) -> u64 {
    stage_seed(seed, "eval-noise")
}

/// Encoder config with noise removed (normalization kept).
pub fn clean_config(cfg: &NagConfig) -> NagConfig {
    NagConfig { sigma: 0.0, ..*cfg }
}

/// Full-batch training from fresh initial weights.
pub fn train(
    bundle: &DatasetBundle,
    arch: ArchKind,
    d: usize,
    depth: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let weights = init_weights(
        arch,
        bundle.feature_dim(),
        d,
        depth,
        config.init,
        stage_seed(config.seed, "init-weights"),
    )?;
    let head = ClassifierHead::init(d, bundle.classes, stage_seed(config.seed, "init-head"));
    train_from(bundle, weights, head, config)
}

/// Full-batch training from the given starting point.
pub fn train_from(
    bundle: &DatasetBundle,
    mut weights: EncoderWeights,
    mut head: ClassifierHead,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_mask = bundle.mask(TRAIN)?;
    let test_mask = bundle.mask(TEST)?;
    let g = &bundle.graph;
    let x = &bundle.features;
    let cfg = &config.encoder;
    if weights.arch == ArchKind::Linear && cfg.mode == Mode::Nag {
        return Err(Error::Unsupported(
            "the linear model has no noisy-aggregation mode".into(),
        ));
    }

    let mut normalizers = vec![SpectralNormalizer::new(); weights.layers.len()];
    if config.scheme == TrainScheme::Constrained {
        for (w, sn) in weights.layers.iter_mut().zip(&mut normalizers) {
            for _ in 0..10 {
                sn.normalize_in_place(w)?;
            }
        }
    }

    // Propagation of X is constant for the linear model; compute it once.
    let propagated = if weights.arch == ArchKind::Linear {
        Some(propagate_depth(g, x, weights.depth)?)
    } else {
        None
    };

    let noise_root = stage_seed(config.seed, "train-noise");
    let mut adam = AdamState::new();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_seed = mix(noise_root, epoch as u64, 0);
        let (loss, grads) = match &propagated {
            Some(p) => linear_backward(p, &bundle.labels, &weights, &head, cfg, train_mask)?,
            None => backward(g, x, &bundle.labels, &weights, &head, cfg, train_mask, epoch_seed)?,
        };
        if !loss.is_finite() {
            return Err(Error::Undefined(format!("training loss diverged at epoch {epoch}")));
        }
        losses.push(loss);
        let grad_slices = grads.slices();
        let mut params = parameter_slices(&mut weights, &mut head);
        adam.step(&mut params, &grad_slices, &config.adam)?;
        if config.scheme == TrainScheme::Constrained {
            for (w, sn) in weights.layers.iter_mut().zip(&mut normalizers) {
                sn.normalize_in_place(w)?;
            }
        }
    }

    let eval = eval_seed(config.seed);
    let logits = match &propagated {
        Some(p) => p.matmul(&weights.layers[0])?.matmul(&head.weight)?,
        None => forward_logits(g, x, &weights, &head, cfg, eval)?,
    };
    let clean_logits = match &propagated {
        Some(_) => logits.clone(),
        None => forward_logits(g, x, &weights, &head, &clean_config(cfg), eval)?,
    };
    Ok(TrainOutcome {
        test_accuracy: accuracy(&logits, &bundle.labels, test_mask)?,
        test_accuracy_clean: accuracy(&clean_logits, &bundle.labels, test_mask)?,
        train_accuracy: accuracy(&logits, &bundle.labels, train_mask)?,
        weights,
        head,
        losses,
        epochs: config.epochs,
    })
}

/// Representations of a trained (or untrained) model for the attacker.
pub fn inference_representations(
    g: &Graph,
    x: &DenseMatrix,
    weights: &EncoderWeights,
    cfg: &NagConfig,
    seed: u64,
) -> Result<DenseMatrix> {
    representations(g, x, weights, cfg, seed)
}

/// `NagConfig` default for training: ReLU between layers, identity on the last.
pub fn default_train_encoder(mode: Mode, sigma: f64) -> NagConfig {
    NagConfig {
        mode,
        sigma,
        ..NagConfig::default()
    }
    .with_activations(Activation::Relu, Activation::Identity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_mask(n: usize) -> NodeSubset {
        NodeSubset::all(n)
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = DenseMatrix::zeros(3, 4);
        let loss = cross_entropy(&uniform, &[0, 1, 3], &all_mask(3)).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);

        let confident = DenseMatrix::from_rows(&[[50.0, 0.0, 0.0]]);
        assert!(cross_entropy(&confident, &[0], &all_mask(1)).unwrap() < 1e-20);

        let two = DenseMatrix::from_rows(&[[1.0, 0.0]]);
        let l = cross_entropy(&two, &[0], &all_mask(1)).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.313_26).abs() < 1e-5);

        let empty = NodeSubset::from_sorted_unchecked(vec![]);
        assert!(cross_entropy(&two, &[0], &empty).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let logits = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(accuracy(&logits, &[0, 1, 0, 1], &all_mask(4)).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 0, 1, 0], &all_mask(4)).unwrap(), 0.0);
        assert_eq!(accuracy(&logits, &[0, 1, 1, 0], &all_mask(4)).unwrap(), 0.5);
        let tie = DenseMatrix::from_rows(&[[2.0, 2.0]]);
        assert_eq!(accuracy(&tie, &[0], &all_mask(1)).unwrap(), 1.0);
    }

    #[test]
    fn adam_scalar_steps() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new();
        let mut p = [1.0];
        state.step(&mut [&mut p], &[&[0.0]], &cfg).unwrap();
        assert_eq!(p[0], 1.0);

        let mut state = AdamState::new();
        let mut p = [1.0];
        state.step(&mut [&mut p], &[&[0.3]], &cfg).unwrap();
        // t = 1: m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let want = 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
        assert_eq!(state.steps(), 1);

        let before = p[0];
        state.step(&mut [&mut p], &[&[0.0]], &cfg).unwrap();
        assert!((state.first_moment()[0][0] - 0.9 * 0.03).abs() < 1e-15);
        assert!(p[0] < before, "momentum keeps moving after the gradient vanishes");
    }

    #[test]
    fn adam_repeated_gradient_steps_shrink() {
        // With a constant gradient the bias-corrected step stays near lr;
        // a sign flip after one step gives a smaller move than the first.
        let cfg = AdamConfig::default();
        let mut state = AdamState::new();
        let mut p = [0.0];
        state.step(&mut [&mut p], &[&[1.0]], &cfg).unwrap();
        let first = -p[0];
        let mid = p[0];
        state.step(&mut [&mut p], &[&[-1.0]], &cfg).unwrap();
        assert!((p[0] - mid).abs() < first);
    }

    #[test]
    fn head_zero_gives_zero_logits() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let x = DenseMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let w = EncoderWeights::linear(DenseMatrix::identity(2), 1).unwrap();
        let head = ClassifierHead {
            weight: DenseMatrix::zeros(2, 3),
        };
        let logits = forward_logits(&g, &x, &w, &head, &NagConfig::standard(), 0).unwrap();
        assert!(logits.as_slice().iter().all(|&z| z == 0.0));

        let head = ClassifierHead {
            weight: DenseMatrix::identity(2),
        };
        let iso = Graph::empty(3);
        assert_eq!(forward_logits(&iso, &x, &w, &head, &NagConfig::standard(), 0).unwrap(), x);
    }

    #[test]
    fn linear_head_gradient_matches_hand_formula() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]);
        let w = EncoderWeights::linear(DenseMatrix::identity(2), 1).unwrap();
        let head = ClassifierHead {
            weight: DenseMatrix::from_rows(&[[0.5, -0.2], [0.1, 0.3]]),
        };
        let labels = [0, 1, 1];
        let mask = all_mask(3);
        let (_, grads) = backward(&g, &x, &labels, &w, &head, &NagConfig::standard(), &mask, 0).unwrap();

        // propagated rows: (x0+x1)/2, (x0+x1+x2)/3, (x1+x2)/2
        let p = DenseMatrix::from_rows(&[[0.5, 1.0], [2.0 / 3.0, 1.0], [0.5, 1.5]]);
        let logits = p.matmul(&head.weight).unwrap();
        let mut resid = DenseMatrix::zeros(3, 2);
        for v in 0..3 {
            let row = logits.row(v);
            let z = row[0].exp() + row[1].exp();
            for c in 0..2 {
                let y = if labels[v] == c { 1.0 } else { 0.0 };
                resid.set(v, c, (row[c].exp() / z - y) / 3.0);
            }
        }
        let want = p.transpose().matmul(&resid).unwrap();
        assert!(grads.head.max_abs_diff(&want) < 1e-14);
    }

    fn random_instance(arch: ArchKind, mode: Mode, seed: u64) -> (Graph, DenseMatrix, Vec<usize>, EncoderWeights, ClassifierHead, NagConfig) {
        use crate::generators::{gen_er, ErSpec};
        let n = 6 + (seed % 5) as usize;
        let d = 3 + (seed % 6) as usize;
        let din = 2 + (seed % 4) as usize;
        let depth = 1 + (seed % 2) as usize;
        let g = gen_er(ErSpec { n, p: 0.4 }, seed).unwrap();
        let mut gauss = rng::gaussian(seed ^ 0xabc);
        let mut xs = vec![0.0; n * din];
        gauss.fill(&mut xs, 1.0);
        let x = DenseMatrix::from_vec(n, din, xs).unwrap();
        let labels: Vec<usize> = (0..n).map(|v| (v * 7 + seed as usize) % 3).collect();
        let (din, init) = if arch == ArchKind::Linear { (d, InitScheme::He) } else { (din, InitScheme::He) };
        let x = if arch == ArchKind::Linear {
            DenseMatrix::from_fn(n, d, |i, j| x.get(i, j % x.cols()) + 0.1 * j as f64)
        } else {
            x
        };
        let weights = init_weights(arch, din, d, depth, init, seed + 1).unwrap();
        let head = ClassifierHead::init(d, 3, seed + 2);
        let cfg = match mode {
            Mode::Nag => NagConfig::nag(0.3),
            Mode::Standard => NagConfig::standard(),
        };
        (g, x, labels, weights, head, cfg)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for arch in ArchKind::ALL {
            let modes: &[Mode] = if arch == ArchKind::Linear { &[Mode::Standard] } else { &[Mode::Standard, Mode::Nag] };
            for &mode in modes {
                for seed in 0..6 {
                    let (g, x, labels, w, head, cfg) = random_instance(arch, mode, seed);
                    let mask = NodeSubset::new((0..g.node_count()).step_by(2).collect(), g.node_count()).unwrap();
                    let r = gradient_check(&g, &x, &labels, &w, &head, &cfg, &mask, 99, 1e-5).unwrap();
                    assert!(r.max_rel_error <= 1e-4, "{arch} {mode:?} seed {seed}: {r:?}");
                    assert!(r.checked > 0 && r.skipped * 10 <= r.checked, "{arch} {mode:?} seed {seed}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn separable_linear_model_reaches_stationarity() {
        let g = Graph::empty(4);
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]);
        let labels = [0, 0, 1, 1];
        let mut w = EncoderWeights::linear(DenseMatrix::identity(2), 1).unwrap();
        let mut head = ClassifierHead { weight: DenseMatrix::zeros(2, 2) };
        let mask = all_mask(4);
        let cfg = NagConfig::standard();
        let adam = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
        let mut state = AdamState::new();
        let mut last = f64::INFINITY;
        for _ in 0..20_000 {
            let (_, grads) = backward(&g, &x, &labels, &w, &head, &cfg, &mask, 0).unwrap();
            last = grads.norm();
            if last < 1e-6 {
                break;
            }
            let gs = grads.slices();
            state.step(&mut parameter_slices(&mut w, &mut head), &gs, &adam).unwrap();
        }
        assert!(last < 1e-6, "gradient norm {last}");
    }

    fn blobs(seed: u64) -> DatasetBundle {
        let n = 40;
        let mut gauss = rng::gaussian(seed);
        let x = DenseMatrix::from_fn(n, 2, |i, j| {
            let centre = if (i < n / 2) == (j == 0) { 3.0 } else { -3.0 };
            centre + 0.5 * gauss.sample()
        });
        let labels = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let mut masks = std::collections::BTreeMap::new();
        masks.insert(TRAIN.to_string(), NodeSubset::new((0..n).step_by(2).collect(), n).unwrap());
        masks.insert(TEST.to_string(), NodeSubset::new((1..n).step_by(2).collect(), n).unwrap());
        DatasetBundle::new(Graph::empty(n), x, labels, 2, masks).unwrap()
    }

    #[test]
    fn separable_blobs_are_learned() {
        let bundle = blobs(3);
        let cfg = TrainConfig {
            epochs: 200,
            encoder: NagConfig::standard(),
            // lr 0.001 moves each weight by at most ~0.2 in 200 steps, too
            // little to undo an adversarial random start.
            adam: AdamConfig { learning_rate: 0.05, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let out = train(&bundle, ArchKind::Linear, 2, 1, &cfg).unwrap();
        assert_eq!(out.train_accuracy, 1.0, "final loss {:?}", out.losses.last());
        assert_eq!(out.losses.len(), 200);
        assert!(out.losses.iter().all(|l| l.is_finite()));
        assert!(out.losses[199] < out.losses[0]);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let bundle = blobs(4);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&bundle, ArchKind::Gcn, 4, 2, &cfg).unwrap();
        let init = init_weights(ArchKind::Gcn, 2, 4, 2, InitScheme::He, stage_seed(0, "init-weights")).unwrap();
        assert_eq!(out.weights, init);
        assert!(out.losses.is_empty());
        assert!((0.0..=1.0).contains(&out.test_accuracy));
    }

    #[test]
    fn training_is_deterministic_and_constrained_norms_hold() {
        let bundle = blobs(5);
        for arch in [ArchKind::Gcn, ArchKind::Gat, ArchKind::MaxSage] {
            let cfg = TrainConfig {
                epochs: 15,
                scheme: TrainScheme::Constrained,
                encoder: NagConfig::nag(0.5),
                seed: 7,
                ..TrainConfig::default()
            };
            let a = train(&bundle, arch, 6, 2, &cfg).unwrap();
            let b = train(&bundle, arch, 6, 2, &cfg).unwrap();
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.head, b.head);
            for w in &a.weights.layers {
                let s = crate::linalg::operator_norm(w).unwrap();
                assert!((s - 1.0).abs() <= 0.1, "{arch}: norm {s}");
            }
        }
    }
}
