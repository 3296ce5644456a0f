//! Random graphs and Gaussian node features.
//!
//! Sparse Bernoulli pair sampling skips ahead by geometric gaps
//! (Batagelj–Brandes), which draws the same distribution as one coin per
//! pair in time proportional to the number of edges.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::rng::{self, uniform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErSpec {
    pub n: usize,
    pub p: f64,
}

impl ErSpec {
    /// `p = ln(n) / n`, the sparse regime used throughout the experiments.
    pub fn sparse(n: usize) -> Self {
        Self {
            n,
            p: (n as f64).ln() / n as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Spec("n must be at least 1".into()));
        }
        check_prob("p", self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmSpec {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub q: f64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::Spec("n and K must be positive".into()));
        }
        if !self.n.is_multiple_of(self.k) {
            return Err(Error::Spec(format!(
                "K={} does not divide n={}",
                self.k, self.n
            )));
        }
        check_prob("p", self.p)?;
        check_prob("q", self.q)
    }

    /// Group of node `v`: contiguous blocks of size `n / K`.
    pub fn group(&self, v: usize) -> usize {
        v * self.k / self.n
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Spec(format!("{name}={p} is not a probability")));
    }
    Ok(())
}

/// Number of failures before the next success of a Bernoulli(p) sequence.
#[inline]
fn geometric_gap(rng: &mut impl RngCore, log_q: f64) -> u64 {
    let u = 1.0 - uniform(rng); // (0, 1]
    let gap = (u.ln() / log_q).floor();
    if gap >= u64::MAX as f64 {
        u64::MAX
    } else {
        gap as u64
    }
}

/// Calls `emit(i)` for each index in `0..total` selected independently with probability `p`.
fn bernoulli_indices(total: u64, p: f64, rng: &mut impl RngCore, mut emit: impl FnMut(u64)) {
    if p <= 0.0 || total == 0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(emit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut i: u64 = 0;
    loop {
        i = i.saturating_add(geometric_gap(rng, log_q));
        if i >= total {
            break;
        }
        emit(i);
        i += 1;
    }
}

/// Unordered pairs among `offset..offset+size`, each kept with probability `p`.
fn sample_triangle(
    offset: usize,
    size: usize,
    p: f64,
    rng: &mut impl RngCore,
    out: &mut Vec<(usize, usize)>,
) {
    if size < 2 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        for v in 1..size {
            for w in 0..v {
                out.push((offset + w, offset + v));
            }
        }
        return;
    }
    let log_q = (1.0 - p).ln();
    let (mut v, mut w): (usize, u64) = (1, 0);
    let mut first = true;
    while v < size {
        let step = geometric_gap(rng, log_q);
        w = if first {
            first = false;
            step
        } else {
            w.saturating_add(1).saturating_add(step)
        };
        while v < size && w >= v as u64 {
            w -= v as u64;
            v += 1;
        }
        if v < size {
            out.push((offset + w as usize, offset + v));
        }
    }
}

pub fn gen_er(spec: ErSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let mut rng = rng::stream(seed);
    let mut pairs = Vec::new();
    sample_triangle(0, spec.n, spec.p, &mut rng, &mut pairs);
    Ok(build(spec.n, pairs))
}

/// One coin per pair; the reference the skip sampler is tested against.
pub fn gen_er_naive(spec: ErSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let mut rng = rng::stream(seed);
    let mut pairs = Vec::new();
    for u in 0..spec.n {
        for v in u + 1..spec.n {
            if uniform(&mut rng) < spec.p {
                pairs.push((u, v));
            }
        }
    }
    Ok(Graph::from_sorted_unique_pairs(spec.n, &pairs))
}

/// Stochastic block model with contiguous equal-size groups.
///
/// Returns the graph and the group of every node.
pub fn gen_sbm(spec: SbmSpec, seed: u64) -> Result<(Graph, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng::stream(seed);
    let size = spec.n / spec.k;
    let mut pairs = Vec::new();
    for a in 0..spec.k {
        sample_triangle(a * size, size, spec.p, &mut rng, &mut pairs);
        for b in a + 1..spec.k {
            let (ra, rb) = (a * size, b * size);
            bernoulli_indices((size * size) as u64, spec.q, &mut rng, |i| {
                let i = i as usize;
                pairs.push((ra + i / size, rb + i % size));
            });
        }
    }
    let membership = (0..spec.n).map(|v| spec.group(v)).collect();
    Ok((build(spec.n, pairs), membership))
}

/// Independent edges with per-pair probabilities; only the upper triangle of `probs` is read.
pub fn gen_inhomogeneous(probs: &DenseMatrix, seed: u64) -> Result<Graph> {
    let n = probs.rows();
    if probs.cols() != n {
        return Err(Error::Spec(format!(
            "probability matrix must be square, got {}x{}",
            n,
            probs.cols()
        )));
    }
    for u in 0..n {
        for v in u + 1..n {
            check_prob(&format!("P[{u}][{v}]"), probs.get(u, v))?;
        }
    }
    let mut rng = rng::stream(seed);
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if uniform(&mut rng) < probs.get(u, v) {
                pairs.push((u, v));
            }
        }
    }
    Ok(Graph::from_sorted_unique_pairs(n, &pairs))
}

/// `n x d` matrix of i.i.d. standard normals (Box–Muller on a ChaCha20 stream).
pub fn gen_features(n: usize, d: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::Spec("feature matrix needs n, d >= 1".into()));
    }
    let mut g = rng::gaussian(seed);
    let mut data = vec![0.0; n * d];
    g.fill(&mut data, 1.0);
    DenseMatrix::from_vec(n, d, data)
}

fn build(n: usize, mut pairs: Vec<(usize, usize)>) -> Graph {
    pairs.sort_unstable();
    Graph::from_sorted_unique_pairs(n, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_extremes() {
        assert_eq!(gen_er(ErSpec { n: 20, p: 0.0 }, 1).unwrap().edge_count(), 0);
        assert_eq!(gen_er(ErSpec { n: 20, p: 1.0 }, 1).unwrap().edge_count(), 190);
        assert!(gen_er(ErSpec { n: 20, p: 1.5 }, 1).is_err());
    }

    #[test]
    fn sbm_two_cliques() {
        let spec = SbmSpec { n: 10, k: 2, p: 1.0, q: 0.0 };
        let (g, k) = gen_sbm(spec, 3).unwrap();
        assert_eq!(g.edge_count(), 2 * 10);
        assert_eq!(k, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        for (u, v) in g.edges() {
            assert_eq!(k[u], k[v]);
        }
        assert!(gen_sbm(SbmSpec { n: 10, k: 3, p: 0.5, q: 0.1 }, 0).is_err());
    }

    #[test]
    fn complete_bipartite_cross_blocks() {
        let (g, _) = gen_sbm(SbmSpec { n: 6, k: 2, p: 0.0, q: 1.0 }, 9).unwrap();
        assert_eq!(g.edge_count(), 9);
    }

    #[test]
    fn inhomogeneous_single_pair() {
        let mut p = DenseMatrix::zeros(4, 4);
        p.set(0, 1, 1.0);
        let g = gen_inhomogeneous(&p, 5).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        p.set(2, 3, -0.1);
        assert!(gen_inhomogeneous(&p, 5).is_err());
    }

    #[test]
    fn features_are_deterministic() {
        let a = gen_features(5, 3, 11).unwrap();
        assert_eq!(a, gen_features(5, 3, 11).unwrap());
        assert_ne!(a, gen_features(5, 3, 12).unwrap());
        assert!(gen_features(0, 3, 1).is_err());
    }
}
