//! Similarity-based edge reconstruction and its evaluation.
//!
//! The attacker sees representations for a victim node set and predicts
//! an edge between `u` and `v` whenever `sim(h_u, h_v) >= τ`. Candidate
//! pairs are all unordered pairs `u < v` of the victim subgraph.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{dot, DenseMatrix};

/// Vectors with a smaller norm score 0 against everything.
pub const DEGENERATE_NORM: f64 = 1e-300;

/// Rows per block when scoring all pairs through a Gram product.
const SCORE_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cos,
    Corr,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Cos => "cos",
            SimilarityKind::Corr => "corr",
        })
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Ok(SimilarityKind::Cos),
            "corr" | "correlation" => Ok(SimilarityKind::Corr),
            other => Err(Error::Unsupported(format!("unknown similarity {other:?}"))),
        }
    }
}

/// A similarity value plus whether a degenerate vector forced it to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cos_sim(x: &[f64], y: &[f64]) -> Result<Similarity> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension(format!(
            "similarity of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
    if nx < DEGENERATE_NORM || ny < DEGENERATE_NORM {
        return Ok(Similarity {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Similarity {
        value: (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Cosine similarity of mean-centred vectors; needs dimension > 1.
pub fn corr_sim(x: &[f64], y: &[f64]) -> Result<Similarity> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "similarity of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() <= 1 {
        return Err(Error::Unsupported(
            "correlation similarity needs dimension greater than 1".into(),
        ));
    }
    cos_sim(&centered(x), &centered(y))
}

pub fn similarity(kind: SimilarityKind, x: &[f64], y: &[f64]) -> Result<Similarity> {
    match kind {
        SimilarityKind::Cos => cos_sim(x, y),
        SimilarityKind::Corr => corr_sim(x, y),
    }
}

/// Scores and ground truth for every candidate pair of one victim subgraph.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pairs: Vec<(u32, u32)>,
    scores: Vec<f64>,
    truth: Vec<bool>,
    degenerate_pairs: usize,
}

impl ScoreSet {
    pub fn new(pairs: Vec<(u32, u32)>, scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if pairs.len() != scores.len() || pairs.len() != truth.len() {
            return Err(Error::Dimension("pairs, scores and truth lengths differ".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Dimension("non-finite score".into()));
        }
        let mut seen: Vec<_> = pairs.clone();
        if seen.iter().any(|(u, v)| u >= v) {
            return Err(Error::Dimension("pairs must satisfy u < v".into()));
        }
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dimension("duplicate pair".into()));
        }
        Ok(Self {
            pairs,
            scores,
            truth,
            degenerate_pairs: 0,
        })
    }

    /// Unlabelled-pair convenience for metric tests: pairs are synthesised.
    pub fn from_scores(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        let pairs = (0..scores.len() as u32).map(|i| (i, i + 1 + scores.len() as u32)).collect();
        Self::new(pairs, scores, truth)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truth(&self) -> &[bool] {
        &self.truth
    }

    /// Pairs where a zero-norm (or constant, for CORR) vector forced the score to 0.
    pub fn degenerate_pairs(&self) -> usize {
        self.degenerate_pairs
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Writes `u,v,score,truth` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["u", "v", "score", "truth"])?;
        for ((&(u, v), s), t) in self.pairs.iter().zip(&self.scores).zip(&self.truth) {
            out.write_record([
                u.to_string(),
                v.to_string(),
                format!("{s}"),
                u8::from(*t).to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Rows scaled to unit norm (after centring for CORR); degenerate rows become zero.
fn unit_rows(h: &DenseMatrix, kind: SimilarityKind) -> Result<(DenseMatrix, Vec<bool>)> {
    if kind == SimilarityKind::Corr && h.cols() <= 1 {
        return Err(Error::Unsupported(
            "correlation similarity needs dimension greater than 1".into(),
        ));
    }
    if h.cols() == 0 {
        return Err(Error::Dimension("zero-width representations".into()));
    }
    let mut out = h.clone();
    let mut degenerate = vec![false; h.rows()];
    for (i, flag) in degenerate.iter_mut().enumerate() {
        let row = out.row_mut(i);
        if kind == SimilarityKind::Corr {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|x| *x -= mean);
        }
        let r = dot(row, row).sqrt();
        if r < DEGENERATE_NORM {
            row.fill(0.0);
            *flag = true;
        } else {
            row.iter_mut().for_each(|x| *x /= r);
        }
    }
    Ok((out, degenerate))
}

/// Scores every unordered pair `u < v` of `victim` using rows of `h`.
pub fn score_pairs(h: &DenseMatrix, victim: &Graph, kind: SimilarityKind) -> Result<ScoreSet> {
    let n = victim.node_count();
    if h.rows() != n {
        return Err(Error::Dimension(format!(
            "{} representation rows for a {n}-node victim graph",
            h.rows()
        )));
    }
    let (unit, degenerate) = unit_rows(h, kind)?;
    let total = n * n.saturating_sub(1) / 2;
    let mut pairs = Vec::with_capacity(total);
    let mut scores = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for start in (0..n).step_by(SCORE_BLOCK) {
        let end = (start + SCORE_BLOCK).min(n);
        let ids: Vec<usize> = (start..end).collect();
        let block = unit.select_rows(&ids);
        let gram = block.matmul_t(&unit)?;
        for u in start..end {
            let row = gram.row(u - start);
            let nb = victim.neighbors(u);
            let mut k = nb.partition_point(|&x| x <= u);
            for (v, &s) in row.iter().enumerate().skip(u + 1) {
                pairs.push((u as u32, v as u32));
                scores.push(s.clamp(-1.0, 1.0));
                let adjacent = k < nb.len() && nb[k] == v;
                if adjacent {
                    k += 1;
                }
                truth.push(adjacent);
            }
        }
    }
    let k = degenerate.iter().filter(|&&d| d).count();
    Ok(ScoreSet {
        pairs,
        scores,
        truth,
        degenerate_pairs: k * (n - k) + k * k.saturating_sub(1) / 2,
    })
}

/// Attack that ignores the model and compares raw features by cosine.
pub fn feature_baseline(x: &DenseMatrix, victim: &Graph) -> Result<ScoreSet> {
    score_pairs(x, victim, SimilarityKind::Cos)
}

/// Predicted adjacency bits: `score >= τ`.
pub fn classify(s: &ScoreSet, tau: f64) -> Vec<bool> {
    s.scores.iter().map(|&x| x >= tau).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackMetrics {
    pub fpr: f64,
    pub fnr: f64,
    /// Always `fpr + fnr`.
    pub err: f64,
    pub threshold: f64,
    /// False when there are no negatives or no positives; the undefined
    /// rate is NaN.
    pub defined: bool,
}

impl AttackMetrics {
    fn from_counts(fp: usize, negatives: usize, fn_: usize, positives: usize, threshold: f64) -> Self {
        let fpr = if negatives == 0 {
            f64::NAN
        } else {
            fp as f64 / negatives as f64
        };
        let fnr = if positives == 0 {
            f64::NAN
        } else {
            fn_ as f64 / positives as f64
        };
        Self {
            fpr,
            fnr,
            err: fpr + fnr,
            threshold,
            defined: negatives > 0 && positives > 0,
        }
    }
}

pub fn rates(s: &ScoreSet, tau: f64) -> AttackMetrics {
    let (mut fp, mut fn_) = (0, 0);
    for (&score, &t) in s.scores.iter().zip(&s.truth) {
        match (score >= tau, t) {
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    AttackMetrics::from_counts(fp, s.negatives(), fn_, s.positives(), tau)
}

/// Scores sorted descending with their truth bits.
fn sorted_desc(s: &ScoreSet) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = s.scores.iter().copied().zip(s.truth.iter().copied()).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

/// Mann–Whitney AUROC: `P(score_pos > score_neg) + ½ P(tie)`.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    let (p, n) = (s.positives(), s.negatives());
    if p == 0 || n == 0 {
        return Err(Error::Undefined(format!(
            "AUROC needs both classes ({p} positives, {n} negatives)"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = sorted_desc(s);
    sorted.reverse();
    // Walk ascending tie groups, counting negatives strictly below.
    let mut neg_below = 0u64;
    let mut concordant2 = 0u128; // twice the credit, to keep halves exact
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        concordant2 += 2 * (gp as u128) * (neg_below as u128) + (gp as u128) * (gn as u128);
        neg_below += gn;
        i = j;
    }
    Ok(concordant2 as f64 / (2.0 * p as f64 * n as f64))
}

/// Threshold minimising `FPR + FNR` over every distinct score and `+∞`.
///
/// Ties go to the largest threshold.
pub fn best_threshold(s: &ScoreSet) -> AttackMetrics {
    let (positives, negatives) = (s.positives(), s.negatives());
    let sorted = sorted_desc(s);
    let mut best = AttackMetrics::from_counts(0, negatives, positives, positives, f64::INFINITY);
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == tau {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let m = AttackMetrics::from_counts(fp, negatives, positives - tp, positives, tau);
        if m.err < best.err {
            best = m;
        }
    }
    best
}

pub fn label_homophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.node_count() {
        return Err(Error::Dimension("one label per node required".into()));
    }
    let m = g.edge_count();
    if m == 0 {
        return Err(Error::Undefined("homophily of a graph without edges".into()));
    }
    let agree = g.edges().filter(|&(u, v)| labels[u] == labels[v]).count();
    Ok(agree as f64 / m as f64)
}

pub fn feature_homophily(g: &Graph, x: &DenseMatrix) -> Result<f64> {
    if x.rows() != g.node_count() {
        return Err(Error::Dimension("one feature row per node required".into()));
    }
    let m = g.edge_count();
    if m == 0 {
        return Err(Error::Undefined("homophily of a graph without edges".into()));
    }
    let mut total = 0.0;
    for (u, v) in g.edges() {
        total += cos_sim(x.row(u), x.row(v))?.value;
    }
    Ok(total / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_set() -> ScoreSet {
        ScoreSet::from_scores(vec![0.9, 0.3, 0.5, 0.1], vec![true, true, false, false]).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3, -2.0, 5.0];
        assert!((cos_sim(&x, &x).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(cos_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        let v = cos_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap().value;
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let z = cos_sim(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(z.degenerate && z.value == 0.0);
        assert!(cos_sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 4.0, -2.0];
        assert!((corr_sim(&x, &x).unwrap().value - 1.0).abs() < 1e-15);
        assert!((corr_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap().value + 1.0).abs() < 1e-15);
        let shifted: Vec<f64> = x.iter().map(|v| v + 7.5).collect();
        assert!((corr_sim(&x, &shifted).unwrap().value - 1.0).abs() < 1e-12);
        assert!(corr_sim(&[1.0], &[2.0]).is_err());
        assert!(corr_sim(&[2.0, 2.0], &[1.0, 3.0]).unwrap().degenerate);
    }

    #[test]
    fn pair_enumeration() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let s = score_pairs(&h, &Graph::from_edges(2, [(0, 1)]).unwrap(), SimilarityKind::Cos).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.truth(), &[true]);

        let path = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = DenseMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let s = score_pairs(&h, &path, SimilarityKind::Cos).unwrap();
        assert_eq!(
            s.pairs(),
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        );
        assert_eq!(s.truth(), &[true, false, false, true, false, true]);
        for (&(u, v), &score) in s.pairs().iter().zip(s.scores()) {
            let direct = cos_sim(h.row(u as usize), h.row(v as usize)).unwrap().value;
            assert!((direct - score).abs() < 1e-12);
        }

        let same = DenseMatrix::from_fn(5, 3, |_, j| j as f64 + 1.0);
        let s = score_pairs(&same, &Graph::empty(5), SimilarityKind::Cos).unwrap();
        assert!(s.scores().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(score_pairs(&same, &Graph::empty(4), SimilarityKind::Cos).is_err());
    }

    #[test]
    fn degenerate_rows_are_counted() {
        let h = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]]);
        let s = score_pairs(&h, &Graph::empty(3), SimilarityKind::Cos).unwrap();
        assert_eq!(s.degenerate_pairs(), 2);
        assert_eq!(&s.scores()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn feature_baseline_matches_cos_scoring() {
        let onehot = DenseMatrix::identity(4);
        let g = Graph::from_edges(4, [(0, 1)]).unwrap();
        let s = feature_baseline(&onehot, &g).unwrap();
        assert!(s.scores().iter().all(|&x| x == 0.0));
        let h = DenseMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64 - 2.0);
        assert_eq!(feature_baseline(&h, &g).unwrap(), score_pairs(&h, &g, SimilarityKind::Cos).unwrap());
    }

    #[test]
    fn classification_and_rates() {
        let s = ScoreSet::from_scores(vec![0.9, 0.5, 0.5, 0.1], vec![true; 4]).unwrap();
        assert_eq!(classify(&s, 0.5), vec![true, true, true, false]);
        assert!(classify(&s, f64::NEG_INFINITY).iter().all(|&b| b));
        assert!(classify(&s, 0.95).iter().all(|&b| !b));

        let h = hand_set();
        let low = rates(&h, -1.0);
        assert_eq!((low.fpr, low.fnr, low.err), (1.0, 0.0, 1.0));
        let high = rates(&h, 2.0);
        assert_eq!((high.fpr, high.fnr, high.err), (0.0, 1.0, 1.0));
        let mid = rates(&h, 0.4);
        assert_eq!((mid.fpr, mid.fnr, mid.err), (0.5, 0.5, 1.0));

        let one_class = rates(&s, 0.5);
        assert!(!one_class.defined && one_class.fpr.is_nan());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&hand_set()).unwrap(), 0.75);
        let sep = ScoreSet::from_scores(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]).unwrap();
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        let ties = ScoreSet::from_scores(vec![0.4; 5], vec![true, false, true, false, false]).unwrap();
        assert_eq!(auroc(&ties).unwrap(), 0.5);
        let all_pos = ScoreSet::from_scores(vec![0.1, 0.2], vec![true, true]).unwrap();
        assert!(matches!(auroc(&all_pos), Err(Error::Undefined(_))));
    }

    #[test]
    fn best_threshold_examples() {
        let sep = ScoreSet::from_scores(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]).unwrap();
        let b = best_threshold(&sep);
        assert_eq!(b.err, 0.0);
        assert_eq!(b.threshold, 0.8);

        let flat = ScoreSet::from_scores(vec![0.3; 4], vec![true, false, true, false]).unwrap();
        assert_eq!(best_threshold(&flat).err, 1.0);

        let b = best_threshold(&hand_set());
        assert_eq!(b.err, 0.5);
        assert_eq!(b.threshold, 0.9);
    }

    #[test]
    fn homophily_examples() {
        let path = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(label_homophily(&path, &[1, 1, 1, 1]).unwrap(), 1.0);
        assert_eq!(label_homophily(&path, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(label_homophily(&Graph::empty(2), &[0, 0]).is_err());

        let same = DenseMatrix::from_fn(4, 2, |_, j| j as f64 + 0.5);
        assert!((feature_homophily(&path, &same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(feature_homophily(&path, &DenseMatrix::identity(4)).unwrap(), 0.0);
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        hand_set().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,v,score,truth\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
