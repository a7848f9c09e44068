//! Representation losses as functions of the classifier `W` and a batch of
//! feature vectors `Φ`, each with its analytic gradient in both arguments.

use crate::classifier::{LinearClassifier, LOG_CLAMP};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{axpy, dot, norm, norm_sq, DenseMatrix};

/// A loss value with `∂L/∂W` and `∂L/∂φ_i` for every batch member.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub loss: f64,
    pub d_weights: DenseMatrix,
    pub d_features: Vec<Vec<f64>>,
}

impl HeadGrads {
    fn zeros(clf: &LinearClassifier, batch: usize) -> Self {
        Self {
            loss: 0.0,
            d_weights: DenseMatrix::zeros(clf.classes(), clf.dim()),
            d_features: vec![vec![0.0; clf.dim()]; batch],
        }
    }

    /// `self += c · other`
    pub fn add_scaled(&mut self, c: f64, other: &HeadGrads) {
        self.loss += c * other.loss;
        self.d_weights
            .add_scaled(c, &other.d_weights)
            .expect("same head shape");
        for (a, b) in self.d_features.iter_mut().zip(&other.d_features) {
            axpy(c, b, a);
        }
    }
}

fn check_head(clf: &LinearClassifier, phis: &[Vec<f64>], labels: &[u32]) -> Result<()> {
    check_dim(phis.len(), labels.len())?;
    if phis.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for p in phis {
        check_dim(clf.dim(), p.len())?;
    }
    if labels.iter().any(|&y| y as usize >= clf.classes()) {
        return Err(Error::invalid("label out of range"));
    }
    Ok(())
}

fn check_batch(phis: &[Vec<f64>]) -> Result<()> {
    if phis.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let d = phis[0].len();
    for p in phis {
        check_dim(d, p.len())?;
    }
    Ok(())
}

/// Mean `−log p_y` with gradients.
pub fn classification_grad(
    clf: &LinearClassifier,
    phis: &[Vec<f64>],
    labels: &[u32],
) -> Result<HeadGrads> {
    check_head(clf, phis, labels)?;
    let scale = 1.0 / phis.len() as f64;
    let mut out = HeadGrads::zeros(clf, phis.len());
    for (i, (phi, &y)) in phis.iter().zip(labels).enumerate() {
        let mut r = clf.probs(phi);
        out.loss -= r[y as usize].max(LOG_CLAMP).ln() * scale;
        r[y as usize] -= 1.0;
        for (k, rk) in r.iter().enumerate() {
            axpy(rk * scale, phi, out.d_weights.row_mut(k));
        }
        out.d_features[i] = clf.weights().transpose_matvec_unchecked(&r);
        out.d_features[i].iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Per-example squared gradient magnitude, averaged:
/// `mean_i α(W, φ_i, y_i) · ‖φ_i‖²`.
pub fn sgm_loss(clf: &LinearClassifier, phis: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    Ok(sgm_grad(clf, phis, labels)?.loss)
}

/// SGM with α differentiated, not held fixed. With `r = p − δ_y`,
/// `∂α/∂z = 2 p ⊙ (r − ⟨r, p⟩)` for logits `z = Wφ`.
pub fn sgm_grad(clf: &LinearClassifier, phis: &[Vec<f64>], labels: &[u32]) -> Result<HeadGrads> {
    check_head(clf, phis, labels)?;
    let scale = 1.0 / phis.len() as f64;
    let mut out = HeadGrads::zeros(clf, phis.len());
    for (i, (phi, &y)) in phis.iter().zip(labels).enumerate() {
        let p = clf.probs(phi);
        let mut r = p.clone();
        r[y as usize] -= 1.0;
        let alpha = norm_sq(&r);
        let phi_sq = norm_sq(phi);
        out.loss += alpha * phi_sq * scale;
        let rp = dot(&r, &p);
        // ∂(α‖φ‖²)/∂z
        let dz: Vec<f64> = p
            .iter()
            .zip(&r)
            .map(|(pk, rk)| 2.0 * pk * (rk - rp) * phi_sq * scale)
            .collect();
        for (k, dzk) in dz.iter().enumerate() {
            axpy(*dzk, phi, out.d_weights.row_mut(k));
        }
        let mut dphi = clf.weights().transpose_matvec_unchecked(&dz);
        axpy(2.0 * alpha * scale, phi, &mut dphi);
        out.d_features[i] = dphi;
    }
    Ok(out)
}

/// Squared Frobenius norm of the batch-average weight gradient:
/// `Σ_k ‖g_k(B, W)‖²`.
pub fn batch_sgm_loss(clf: &LinearClassifier, phis: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    Ok(batch_sgm_grad(clf, phis, labels)?.loss)
}

pub fn batch_sgm_grad(
    clf: &LinearClassifier,
    phis: &[Vec<f64>],
    labels: &[u32],
) -> Result<HeadGrads> {
    check_head(clf, phis, labels)?;
    let n = phis.len() as f64;
    let residuals: Vec<(Vec<f64>, Vec<f64>)> = phis
        .iter()
        .zip(labels)
        .map(|(phi, &y)| {
            let p = clf.probs(phi);
            let mut r = p.clone();
            r[y as usize] -= 1.0;
            (p, r)
        })
        .collect();
    // G = (1/n) Σ r_i φ_iᵀ
    let mut g = DenseMatrix::zeros(clf.classes(), clf.dim());
    for (phi, (_, r)) in phis.iter().zip(&residuals) {
        for (k, rk) in r.iter().enumerate() {
            axpy(rk / n, phi, g.row_mut(k));
        }
    }
    let mut out = HeadGrads::zeros(clf, phis.len());
    out.loss = norm_sq(g.data());
    for (i, (phi, (p, r))) in phis.iter().zip(&residuals).enumerate() {
        // direct dependence through φ_i: (2/n) Gᵀ r_i
        let mut dphi = g.transpose_matvec_unchecked(r);
        dphi.iter_mut().for_each(|v| *v *= 2.0 / n);
        // through r_i: a = (2/n) G φ_i, then ∂/∂z = (diag p − p pᵀ) a
        let a: Vec<f64> = g.matvec_unchecked(phi).iter().map(|v| v * 2.0 / n).collect();
        let ap = dot(&a, p);
        let dz: Vec<f64> = p.iter().zip(&a).map(|(pk, ak)| pk * (ak - ap)).collect();
        for (k, dzk) in dz.iter().enumerate() {
            axpy(*dzk, phi, out.d_weights.row_mut(k));
        }
        axpy(1.0, &clf.weights().transpose_matvec_unchecked(&dz), &mut dphi);
        out.d_features[i] = dphi;
    }
    Ok(out)
}

/// Mean `‖φ‖²` and its feature gradient.
pub fn l2_feature_loss(phis: &[Vec<f64>]) -> Result<f64> {
    Ok(l2_feature_grad(phis)?.0)
}

pub fn l2_feature_grad(phis: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(phis)?;
    let n = phis.len() as f64;
    let loss = phis.iter().map(|p| norm_sq(p)).sum::<f64>() / n;
    let grads = phis
        .iter()
        .map(|p| p.iter().map(|v| 2.0 * v / n).collect())
        .collect();
    Ok((loss, grads))
}

/// Mean `‖φ‖₁` and its feature (sub)gradient, 0 at 0.
pub fn l1_feature_loss(phis: &[Vec<f64>]) -> Result<f64> {
    Ok(l1_feature_grad(phis)?.0)
}

pub fn l1_feature_grad(phis: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(phis)?;
    let n = phis.len() as f64;
    let loss = phis
        .iter()
        .map(|p| p.iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        / n;
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let grads = phis
        .iter()
        .map(|p| p.iter().map(|&v| sign(v) / n).collect())
        .collect();
    Ok((loss, grads))
}

/// `max(‖φ₊ − φ‖ − ‖φ₋ − φ‖ + γ, 0)` with Euclidean (unsquared) norms.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    Ok(triplet_grad(anchor, positive, negative, margin)?.0)
}

/// Triplet loss with gradients for (anchor, positive, negative).
pub fn triplet_grad(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, [Vec<f64>; 3])> {
    check_dim(anchor.len(), positive.len())?;
    check_dim(anchor.len(), negative.len())?;
    if !(margin > 0.0) {
        return Err(Error::invalid(format!("triplet margin must be > 0, got {margin}")));
    }
    let d = anchor.len();
    let dp: Vec<f64> = positive.iter().zip(anchor).map(|(a, b)| a - b).collect();
    let dn: Vec<f64> = negative.iter().zip(anchor).map(|(a, b)| a - b).collect();
    let (np, nn) = (norm(&dp), norm(&dn));
    let value = np - nn + margin;
    if value <= 0.0 {
        return Ok((0.0, [vec![0.0; d], vec![0.0; d], vec![0.0; d]]));
    }
    let unit = |v: &[f64], n: f64| -> Vec<f64> {
        if n > 0.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            vec![0.0; v.len()]
        }
    };
    let up = unit(&dp, np);
    let un = unit(&dn, nn);
    let g_anchor: Vec<f64> = up.iter().zip(&un).map(|(a, b)| -a + b).collect();
    let g_neg: Vec<f64> = un.iter().map(|v| -v).collect();
    Ok((value, [g_anchor, up, g_neg]))
}
