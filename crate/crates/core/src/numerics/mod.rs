//! Dense linear algebra, stable softmax, spectral helpers and the seeded
//! generator shared by every other module. All arithmetic is `f64`.

mod matrix;
mod rng;

pub use matrix::{axpy, dot, norm, norm_sq, squared_distance, sub, DenseMatrix};
pub use rng::{derive_seed, label_hash, SeededRng};

use crate::error::{check_dim, Error, Result};

/// Norms below this are treated as "no direction".
pub const ZERO_NORM: f64 = 1e-12;

/// Softmax with max-subtraction.
pub fn softmax_stable(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input is not finite"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

/// Unchecked softmax for hot loops; `logits` must be finite and non-empty.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Cosine of the angle between `u` and `v`; 0 when either is (near) zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient estimate. Stops once successive estimates agree to
/// `tol` relative.
pub fn power_iteration_max_eig(
    a: &DenseMatrix,
    iters: usize,
    tol: f64,
    rng: &mut SeededRng,
) -> Result<PowerIteration> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "power iteration needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(1e-9) {
        return Err(Error::invalid("power iteration needs a symmetric matrix"));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::invalid("power iteration on an empty matrix"));
    }
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut estimate = 0.0;
    for it in 1..=iters {
        let w = a.matvec_unchecked(&v);
        let rayleigh = dot(&v, &w);
        let nw = norm(&w);
        if nw < ZERO_NORM {
            return Ok(PowerIteration {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let done = it > 1 && (rayleigh - estimate).abs() <= tol * rayleigh.abs();
        estimate = rayleigh;
        if done {
            return Ok(PowerIteration {
                value: estimate,
                iterations: it,
                converged: true,
            });
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(PowerIteration {
        value: estimate,
        iterations: iters,
        converged: false,
    })
}

/// All eigenvalues of a symmetric matrix, ascending, from a dense
/// symmetric eigendecomposition.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::invalid("eigenvalues of a non-square matrix"));
    }
    let n = a.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Indices of the `k` largest scores; equal scores go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    Ok(top_k_unchecked(scores, k))
}

pub(crate) fn top_k_unchecked(scores: &[f64], k: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (i, &s) in scores.iter().enumerate() {
        // strictly-greater insertion keeps earlier indices ahead on ties
        let pos = best
            .iter()
            .position(|&j| s > scores[j])
            .unwrap_or(best.len());
        if pos < k {
            best.insert(pos, i);
            best.truncate(k);
        }
    }
    best
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    top_k_unchecked(scores, 1)[0]
}
