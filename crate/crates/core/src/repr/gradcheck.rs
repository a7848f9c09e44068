//! Finite-difference verification of every analytic gradient used in
//! training, taken through a small extractor.

use serde::{Deserialize, Serialize};

use super::{objective_grads, Objective, RegularizerKind};
use crate::classifier::LinearClassifier;
use crate::error::{check_dim, Error, Result};
use crate::mlp::Mlp;
use crate::numerics::{norm, sub, DenseMatrix, SeededRng};

/// Loss whose gradient is checked. Each one is taken alone, not added to
/// the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckedLoss {
    Classification,
    Sgm,
    BatchSgm,
    L2Feat,
    L1Feat,
    Triplet,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 6] = [
        CheckedLoss::Classification,
        CheckedLoss::Sgm,
        CheckedLoss::BatchSgm,
        CheckedLoss::L2Feat,
        CheckedLoss::L1Feat,
        CheckedLoss::Triplet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Classification => "classification",
            CheckedLoss::Sgm => "sgm",
            CheckedLoss::BatchSgm => "batch_sgm",
            CheckedLoss::L2Feat => "l2_feat",
            CheckedLoss::L1Feat => "l1_feat",
            CheckedLoss::Triplet => "triplet",
        }
    }

    fn objective(self, margin: f64) -> Objective {
        let (classification, regularizer) = match self {
            CheckedLoss::Classification => (1.0, RegularizerKind::None),
            CheckedLoss::Sgm => (0.0, RegularizerKind::Sgm),
            CheckedLoss::BatchSgm => (0.0, RegularizerKind::BatchSgm),
            CheckedLoss::L2Feat => (0.0, RegularizerKind::L2Feat),
            CheckedLoss::L1Feat => (0.0, RegularizerKind::L1Feat),
            CheckedLoss::Triplet => (0.0, RegularizerKind::Triplet),
        };
        Objective {
            classification,
            regularizer,
            lambda: 1.0,
            margin,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub extractor: Mlp,
    pub classifier: LinearClassifier,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub triplets: Vec<(usize, usize, usize)>,
    pub margin: f64,
}

impl GradCheckInstance {
    pub fn param_count(&self) -> usize {
        self.extractor.param_count() + self.classifier.weights().data().len()
    }

    /// Extractor parameters followed by the classifier weights.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.extractor.params_flat();
        p.extend_from_slice(self.classifier.weights().data());
        p
    }

    fn with_params(&self, theta: &[f64]) -> Result<Self> {
        check_dim(self.param_count(), theta.len())?;
        let mut out = self.clone();
        let split = self.extractor.param_count();
        out.extractor.set_params_flat(&theta[..split])?;
        out.classifier
            .weights_mut()
            .data_mut()
            .copy_from_slice(&theta[split..]);
        Ok(out)
    }

    fn evaluate(&self, loss: CheckedLoss) -> Result<(f64, Vec<f64>)> {
        let g = objective_grads(
            &self.extractor,
            &self.classifier,
            &self.inputs,
            &self.labels,
            &self.triplets,
            &loss.objective(self.margin),
        )?;
        let mut grad = g.extractor.flatten();
        grad.extend_from_slice(g.classifier.data());
        Ok((g.loss, grad))
    }
}

/// Central differences of `f` at `theta` against `analytic`, returning the
/// max over parameters of `|fd − analytic| / max(|analytic|, 1e-8)`.
///
/// Uses the fourth-order stencil
/// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`; the two-point rule
/// leaves ~1e-11 absolute error, too much for components near 1e-7.
/// Discrepancies within the stencil's own rounding are not counted: each
/// loss evaluation is taken to be good to `16ε·max|f|`, which the stencil
/// amplifies to `24ε·max|f| / h`.
pub fn check_gradient<F>(mut f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_dim(theta.len(), analytic.len())?;
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be > 0, got {h}")));
    }
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut at = |step: f64| {
            x[i] = theta[i] + step;
            f(&x)
        };
        let v = [at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?];
        x[i] = theta[i];
        let fd = (8.0 * (v[0] - v[1]) - (v[2] - v[3])) / (12.0 * h);
        let scale = v.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let rounding = 24.0 * f64::EPSILON * scale / h;
        let excess = ((fd - analytic[i]).abs() - rounding).max(0.0);
        worst = worst.max(excess / analytic[i].abs().max(1e-8));
    }
    Ok(worst)
}

/// Max relative error of the analytic gradient of `loss` over all
/// extractor and classifier parameters of `instance`.
pub fn gradient_check(loss: CheckedLoss, instance: &GradCheckInstance, h: f64) -> Result<f64> {
    if instance.param_count() > 1000 {
        return Err(Error::invalid(format!(
            "instance has {} parameters, at most 1000 allowed",
            instance.param_count()
        )));
    }
    let (_, analytic) = instance.evaluate(loss)?;
    check_gradient(
        |theta| Ok(instance.with_params(theta)?.evaluate(loss)?.0),
        &instance.params(),
        &analytic,
        h,
    )
}

/// Smallest distance of any quantity with a kink (a pre-activation, a
/// triplet hinge argument, a triplet distance) from its kink.
fn kink_distance(inst: &GradCheckInstance, loss: CheckedLoss) -> f64 {
    let mut closest = f64::INFINITY;
    let mut phis = Vec::new();
    for x in &inst.inputs {
        let t = inst.extractor.trace_unchecked(x);
        closest = closest.min(t.min_abs_preactivation());
        phis.push(t.output().to_vec());
    }
    if loss == CheckedLoss::Triplet {
        for &(a, p, n) in &inst.triplets {
            let dp = norm(&sub(&phis[p], &phis[a]));
            let dn = norm(&sub(&phis[n], &phis[a]));
            closest = closest.min(dp).min(dn).min((dp - dn + inst.margin).abs());
        }
    }
    closest
}

/// Step that [`gradient_check`] is meant to be called with on instances
/// from [`random_instance`].
pub const DEFAULT_STEP: f64 = 1e-3;

/// Kinks must be this far away so that no stencil point of
/// [`DEFAULT_STEP`] crosses one.
const KINK_CLEARANCE: f64 = 0.05;

/// Random instance with `K ≤ 5` classes, feature dimension `≤ 8`, two
/// hidden layers and every kink at least [`KINK_CLEARANCE`] away.
/// Resamples until the instance qualifies.
pub fn random_instance(loss: CheckedLoss, seed: u64) -> GradCheckInstance {
    let mut rng = SeededRng::new(seed);
    loop {
        let k = 2 + rng.below(4);
        let raw = 3 + rng.below(4);
        let h1 = 4 + rng.below(5);
        let h2 = 4 + rng.below(5);
        let feat = 2 + rng.below(7);
        let n = 3 + rng.below(4);
        let extractor = Mlp::new(&[raw, h1, h2, feat], &mut rng).expect("valid sizes");
        let w: Vec<f64> = (0..k * feat).map(|_| rng.normal()).collect();
        let classifier =
            LinearClassifier::new(DenseMatrix::new(k, feat, w).expect("shape")).expect("K >= 2");
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..raw).map(|_| rng.normal()).collect())
            .collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
        let triplets = if loss == CheckedLoss::Triplet {
            (0..n)
                .map(|a| {
                    let p = (a + 1 + rng.below(n - 1)) % n;
                    let mut q = rng.below(n);
                    while q == a || q == p {
                        q = rng.below(n);
                    }
                    (a, p, q)
                })
                .collect()
        } else {
            Vec::new()
        };
        let inst = GradCheckInstance {
            extractor,
            classifier,
            inputs,
            labels,
            triplets,
            margin: rng.uniform_range(0.5, 2.0),
        };
        let live = inst
            .inputs
            .iter()
            .all(|x| inst.extractor.trace_unchecked(x).output().iter().any(|&v| v > 0.0));
        if live && kink_distance(&inst, loss) > KINK_CLEARANCE {
            return inst;
        }
    }
}
