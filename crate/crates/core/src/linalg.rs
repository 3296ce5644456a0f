//! Spectral utilities for weight matrices: operator norm, condition number
//! and warm-started spectral normalization.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, DenseMatrix};

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-9;

/// Condition numbers above this ratio are reported as infinite.
const RANK_CUTOFF: f64 = 1e-12;

/// Largest singular value by power iteration on `WᵀW`.
pub fn operator_norm(w: &DenseMatrix) -> Result<f64> {
    operator_norm_with(w, DEFAULT_MAX_ITER, DEFAULT_TOL)
}

/// Power iteration with an explicit iteration cap and a relative tolerance
/// on successive Rayleigh quotients.
pub fn operator_norm_with(w: &DenseMatrix, max_iter: usize, tol: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::Unsupported("operator norm of a non-finite matrix".into()));
    }
    let cols = w.cols();
    if cols == 0 || w.rows() == 0 {
        return Ok(0.0);
    }
    // Fixed irrational start so structured matrices are never orthogonal to it.
    let mut v: Vec<f64> = (0..cols)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut rayleigh = 0.0;
    for _ in 0..max_iter {
        let wv = w.mul_vec(&v);
        let next = w.vec_mul(&wv); // WᵀW v
        let r = dot(&v, &next);
        let nn = norm(&next);
        if nn == 0.0 {
            return Ok(0.0);
        }
        v = next.into_iter().map(|x| x / nn).collect();
        if (r - rayleigh).abs() <= tol * r.abs().max(f64::MIN_POSITIVE) {
            return Ok(r.sqrt());
        }
        rayleigh = r;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: rayleigh.sqrt(),
    })
}

/// Largest singular value that does not give up: power iteration, then a
/// 50× longer run, then the Jacobi SVD. Near-equal top singular values
/// (common after spectral normalization) stall the first stage.
pub fn spectral_norm(w: &DenseMatrix) -> Result<f64> {
    match operator_norm(w) {
        Err(Error::NoConvergence { .. }) => {}
        other => return other,
    }
    match operator_norm_with(w, 50 * DEFAULT_MAX_ITER, DEFAULT_TOL) {
        Err(Error::NoConvergence { .. }) => Ok(singular_values(w)[0]),
        other => other,
    }
}

/// Singular values in descending order by one-sided Jacobi rotations.
pub fn singular_values(w: &DenseMatrix) -> Vec<f64> {
    // Work on the orientation with fewer columns; singular values are shared.
    let a = if w.cols() > w.rows() { w.transpose() } else { w.clone() };
    let (m, n) = a.shape();
    // Column-major copy: columns are what the rotations touch.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `σ_max / σ_min`, or `+∞` when `σ_min < 1e-12 · σ_max`.
pub fn condition_number(w: &DenseMatrix) -> f64 {
    let sv = singular_values(w);
    // A wide matrix has min(rows, cols) singular values; all zero means rank 0.
    let (Some(&max), Some(&min)) = (sv.first(), sv.last()) else {
        return f64::INFINITY;
    };
    if max == 0.0 || min < RANK_CUTOFF * max {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral normalization with a persistent power-iteration vector.
///
/// Each call performs one power step from the previous left singular vector
/// estimate and divides the matrix by `uᵀ W v`.
#[derive(Clone, Debug, Default)]
pub struct SpectralNormalizer {
    u: Option<Vec<f64>>,
}

impl SpectralNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current estimate of the largest singular value of `w` after one power step.
    pub fn estimate(&mut self, w: &DenseMatrix) -> Result<f64> {
        if w.as_slice().iter().all(|&x| x == 0.0) {
            return Err(Error::Unsupported("cannot normalize a zero matrix".into()));
        }
        let rows = w.rows();
        let mut u = match self.u.take() {
            Some(u) if u.len() == rows => u,
            _ => {
                let mut u: Vec<f64> = (0..rows)
                    .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.754_877_666_2).fract())
                    .collect();
                let nu = norm(&u);
                u.iter_mut().for_each(|x| *x /= nu);
                u
            }
        };
        let mut v = w.vec_mul(&u); // Wᵀu
        let nv = norm(&v);
        if nv == 0.0 {
            // u fell into the left null space; restart from W's row sums.
            u = w.mul_vec(&vec![1.0; w.cols()]);
            let nu = norm(&u);
            if nu == 0.0 {
                u = vec![1.0 / (rows as f64).sqrt(); rows];
            } else {
                u.iter_mut().for_each(|x| *x /= nu);
            }
            v = w.vec_mul(&u);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut wu = w.mul_vec(&v); // W v
        let sigma = norm(&wu);
        wu.iter_mut().for_each(|x| *x /= sigma);
        self.u = Some(wu);
        Ok(sigma)
    }

    /// `w / σ̂(w)`.
    pub fn normalize(&mut self, w: &DenseMatrix) -> Result<DenseMatrix> {
        let sigma = self.estimate(w)?;
        Ok(w.scaled(1.0 / sigma))
    }

    pub fn normalize_in_place(&mut self, w: &mut DenseMatrix) -> Result<f64> {
        let sigma = self.estimate(w)?;
        w.scale(1.0 / sigma);
        Ok(sigma)
    }
}

/// Stateless single-call form: a fresh normalizer run for `steps` power steps.
pub fn spectral_normalize(w: &DenseMatrix, steps: usize) -> Result<DenseMatrix> {
    let mut sn = SpectralNormalizer::new();
    let mut sigma = sn.estimate(w)?;
    for _ in 1..steps {
        sigma = sn.estimate(w)?;
    }
    Ok(w.scaled(1.0 / sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&DenseMatrix::identity(5)).unwrap() - 1.0).abs() < 1e-12);
        assert!((operator_norm(&DenseMatrix::diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-9);
        let rect = DenseMatrix::from_rows(&[[0.0, 2.0, 0.0], [0.0, 0.0, 0.5]]);
        assert!((operator_norm(&rect).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(operator_norm(&DenseMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn non_convergence_carries_estimate() {
        let w = DenseMatrix::diag(&[1.0, 0.999_999]);
        match operator_norm_with(&w, 2, 1e-15) {
            Err(Error::NoConvergence { iterations, estimate }) => {
                assert_eq!(iterations, 2);
                assert!(estimate > 0.99);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn spectral_norm_survives_near_repeated_values() {
        let w = DenseMatrix::diag(&[1.0, 1.0 - 1e-7, 0.3]);
        let rotated = DenseMatrix::from_fn(3, 3, |i, j| {
            // orthogonal mixing so the start vector is not aligned
            let q = [[0.6, 0.8, 0.0], [-0.8, 0.6, 0.0], [0.0, 0.0, 1.0]];
            (0..3).map(|k| q[i][k] * w.get(k, j)).sum()
        });
        assert!((spectral_norm(&rotated).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn condition_number_examples() {
        assert!((condition_number(&DenseMatrix::identity(3)) - 1.0).abs() < 1e-12);
        assert!((condition_number(&DenseMatrix::diag(&[4.0, 2.0])) - 2.0).abs() < 1e-12);
        assert_eq!(
            condition_number(&DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]])),
            f64::INFINITY
        );
    }

    #[test]
    fn spectral_normalization_of_scaled_identity() {
        let w = DenseMatrix::identity(4).scaled(5.0);
        let out = spectral_normalize(&w, 5).unwrap();
        assert!(out.max_abs_diff(&DenseMatrix::identity(4)) < 1e-12);
        assert!(spectral_normalize(&DenseMatrix::zeros(2, 2), 1).is_err());
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let w = DenseMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64).sin());
        let a = spectral_normalize(&w, 50).unwrap();
        let b = spectral_normalize(&w.scaled(17.0), 50).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }
}
