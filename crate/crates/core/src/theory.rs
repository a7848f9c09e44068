//! Curvature and distance bounds for the multiclass logistic loss, checked
//! numerically on small random instances.
//!
//! With `L(W) = (1/n) Σ −log p_{y_i}(x_i)` the Hessian over the stacked rows
//! of `W` is `(1/n) Σ (diag(p_i) − p_i p_iᵀ) ⊗ x_i x_iᵀ`, whose largest
//! eigenvalue never exceeds `(1/n) Σ ‖x_i‖²`. The gradient is therefore
//! Lipschitz with that constant, which gives
//! `‖W − W_B‖ ≥ ‖∇L(W)‖ / ((1/n) Σ ‖x_i‖²)` for the minimizer `W_B`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{frobenius_dot, train_to_optimum, LinearClassifier};
use crate::dataset::{make_synthetic, ExampleSource, SyntheticSpec};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{derive_seed, norm_sq, symmetric_eigenvalues, DenseMatrix, SeededRng};

/// Largest `K·d` for which the Hessian is assembled densely.
pub const HESSIAN_CAP: usize = 200;

/// Slack on `λ_max ≤ bound`.
pub const LIPSCHITZ_TOL: f64 = 1e-9;

fn check_instance<R: AsRef<[f64]>>(clf: &LinearClassifier, features: &[R], labels: &[u32]) -> Result<()> {
    check_dim(features.len(), labels.len())?;
    if features.is_empty() {
        return Err(Error::invalid("empty example set"));
    }
    for x in features {
        check_dim(clf.dim(), x.as_ref().len())?;
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= clf.classes()) {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            clf.classes()
        )));
    }
    Ok(())
}

/// Dense `Kd × Kd` Hessian of the mean log loss with respect to the rows of
/// `W` stacked in order; block `(j, k)` is
/// `(1/n) Σ p_ij (δ_jk − p_ik) x_i x_iᵀ`. Labels only enter through
/// validation since the Hessian does not depend on them.
pub fn hessian_full<R: AsRef<[f64]>>(
    clf: &LinearClassifier,
    features: &[R],
    labels: &[u32],
) -> Result<DenseMatrix> {
    check_instance(clf, features, labels)?;
    let (k, d) = (clf.classes(), clf.dim());
    if k * d > HESSIAN_CAP {
        return Err(Error::invalid(format!(
            "dense Hessian capped at K*d <= {HESSIAN_CAP}, got {}",
            k * d
        )));
    }
    let size = k * d;
    let mut h = DenseMatrix::zeros(size, size);
    let inv_n = 1.0 / features.len() as f64;
    for x in features {
        let x = x.as_ref();
        let p = clf.probs(x);
        for j in 0..k {
            for l in 0..k {
                let c = p[j] * (if j == l { 1.0 } else { 0.0 } - p[l]) * inv_n;
                if c == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let row = h.row_mut(j * d + a);
                    for b in 0..d {
                        row[l * d + b] += c * x[a] * x[b];
                    }
                }
            }
        }
    }
    Ok(h)
}

/// `(1/n) Σ ‖x_i‖²`.
pub fn hessian_upper_bound<R: AsRef<[f64]>>(features: &[R]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::invalid("bound needs at least one example"));
    }
    Ok(features.iter().map(|x| norm_sq(x.as_ref())).sum::<f64>() / features.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub seed: u64,
    pub classes: usize,
    pub dim: usize,
    pub examples: usize,
    pub lambda_max: f64,
    pub bound: f64,
    /// `bound − lambda_max`.
    pub margin: f64,
    pub satisfied: bool,
}

/// Largest sizes drawn by [`verify_lipschitz_bound`]; each instance picks
/// `K ∈ [2, max_classes]`, `d ∈ [1, max_dim]`, `n ∈ [1, max_examples]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceCaps {
    pub max_classes: usize,
    pub max_dim: usize,
    pub max_examples: usize,
}

impl Default for InstanceCaps {
    fn default() -> Self {
        Self {
            max_classes: 4,
            max_dim: 6,
            max_examples: 8,
        }
    }
}

fn log_uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp()
}

fn gaussian_rows(rng: &mut SeededRng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| scale * rng.normal()).collect())
        .collect()
}

fn random_weights(rng: &mut SeededRng, k: usize, d: usize, scale: f64) -> Result<LinearClassifier> {
    LinearClassifier::new(DenseMatrix::new(
        k,
        d,
        (0..k * d).map(|_| scale * rng.normal()).collect(),
    )?)
}

/// The Lipschitz check on one random instance. Weight and feature scales
/// are log-uniform over `[0.1, 10]` so that both flat and saturated
/// softmax regimes occur.
pub fn lipschitz_instance(seed: u64, caps: &InstanceCaps) -> Result<HessianReport> {
    let mut rng = SeededRng::new(seed);
    let k = 2 + rng.below(caps.max_classes - 1);
    let d = 1 + rng.below(caps.max_dim);
    let n = 1 + rng.below(caps.max_examples);
    let w_scale = log_uniform(&mut rng, 0.1, 10.0);
    let x_scale = log_uniform(&mut rng, 0.1, 10.0);
    let clf = random_weights(&mut rng, k, d, w_scale)?;
    let xs = gaussian_rows(&mut rng, n, d, x_scale);
    let ys: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
    let h = hessian_full(&clf, &xs, &ys)?;
    let lambda_max = *symmetric_eigenvalues(&h)?.last().expect("non-empty Hessian");
    let bound = hessian_upper_bound(&xs)?;
    Ok(HessianReport {
        seed,
        classes: k,
        dim: d,
        examples: n,
        lambda_max,
        bound,
        margin: bound - lambda_max,
        satisfied: lambda_max <= bound + LIPSCHITZ_TOL,
    })
}

/// Runs `count` random instances with seeds derived from `seed`. Violations
/// are reported through `satisfied`, not as errors.
pub fn verify_lipschitz_bound(count: usize, caps: &InstanceCaps, seed: u64) -> Result<Vec<HessianReport>> {
    if caps.max_classes < 2 || caps.max_dim == 0 || caps.max_examples == 0 {
        return Err(Error::invalid("caps need max_classes >= 2 and positive dim and examples"));
    }
    if caps.max_classes * caps.max_dim > HESSIAN_CAP {
        return Err(Error::invalid(format!(
            "caps allow K*d = {}, above the dense limit {HESSIAN_CAP}",
            caps.max_classes * caps.max_dim
        )));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| lipschitz_instance(derive_seed(seed, &[i]), caps))
        .collect()
}

/// `‖∇L(W)‖_F / ((1/n) Σ ‖x_i‖²)`.
pub fn distance_lower_bound<R: AsRef<[f64]>>(
    clf: &LinearClassifier,
    features: &[R],
    labels: &[u32],
) -> Result<f64> {
    check_instance(clf, features, labels)?;
    let denom = hessian_upper_bound(features)?;
    if denom == 0.0 {
        return Err(Error::invalid("all features are zero, the bound is undefined"));
    }
    Ok(clf.grad_wrt_weights(features, labels)?.frobenius_norm() / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBoundReport {
    pub seed: u64,
    pub draw: usize,
    pub classes: usize,
    pub dim: usize,
    pub examples: usize,
    /// `‖∇L(W*)‖_F`.
    pub grad_norm: f64,
    pub bound: f64,
    /// `‖W* − W_B‖_F`.
    pub distance: f64,
    /// Allowance for `W_B` being an inexact optimum.
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceVerification {
    pub reports: Vec<DistanceBoundReport>,
    /// Instance seeds whose `W_B` did not reach `grad_tol`.
    pub skipped: Vec<u64>,
}

const OPTIMUM_MAX_ITERS: usize = 200_000;

/// Random `W*` around `W_B`: a uniform direction at a radius log-uniform
/// over `[1e-3, 1e2]`.
fn perturb(base: &LinearClassifier, radius: f64, rng: &mut SeededRng) -> Result<LinearClassifier> {
    let mut u: Vec<f64> = (0..base.classes() * base.dim()).map(|_| rng.normal()).collect();
    let s = radius / norm_sq(&u).sqrt();
    u.iter_mut().for_each(|v| *v *= s);
    let mut w = base.weights().clone();
    w.add_scaled(1.0, &DenseMatrix::new(base.classes(), base.dim(), u)?)?;
    LinearClassifier::new(w)
}

/// One instance of the distance check: `K ∈ [2, 3]`, `d ∈ [1, 3]`,
/// `n ∈ [20, 40]` with random labels, so that a finite minimizer exists
/// almost surely. Returns `None` if `W_B` does not converge.
pub fn distance_instance(seed: u64, draws: usize, grad_tol: f64) -> Result<Option<Vec<DistanceBoundReport>>> {
    let mut rng = SeededRng::new(seed);
    let k = 2 + rng.below(2);
    let d = 1 + rng.below(3);
    let n = 20 + rng.below(21);
    let xs = gaussian_rows(&mut rng, n, d, 1.0);
    let ys: Vec<u32> = (0..n).map(|_| rng.below(k) as u32).collect();
    let opt = train_to_optimum(&xs, &ys, k, grad_tol, OPTIMUM_MAX_ITERS)?;
    if !opt.converged {
        return Ok(None);
    }
    let denom = hessian_upper_bound(&xs)?;
    let slack = grad_tol / denom;
    let mut out = Vec::with_capacity(draws);
    for draw in 0..draws {
        let radius = log_uniform(&mut rng, 1e-3, 1e2);
        let star = perturb(&opt.classifier, radius, &mut rng)?;
        let grad_norm = star.grad_wrt_weights(&xs, &ys)?.frobenius_norm();
        let bound = grad_norm / denom;
        let distance = {
            let mut diff = star.weights().clone();
            diff.add_scaled(-1.0, opt.classifier.weights())?;
            diff.frobenius_norm()
        };
        out.push(DistanceBoundReport {
            seed,
            draw,
            classes: k,
            dim: d,
            examples: n,
            grad_norm,
            bound,
            distance,
            slack,
            satisfied: distance >= bound * (1.0 - 1e-6) - slack,
        });
    }
    Ok(Some(out))
}

pub fn verify_distance_bound(
    instances: usize,
    draws: usize,
    grad_tol: f64,
    seed: u64,
) -> Result<DistanceVerification> {
    if !(grad_tol > 0.0) {
        return Err(Error::invalid("grad_tol must be positive"));
    }
    let results: Vec<(u64, Option<Vec<DistanceBoundReport>>)> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[i]);
            distance_instance(s, draws, grad_tol).map(|r| (s, r))
        })
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in results {
        match r {
            Some(r) => reports.extend(r),
            None => skipped.push(s),
        }
    }
    Ok(DistanceVerification { reports, skipped })
}

/// Features and labels for the gradient-norm experiment.
#[derive(Debug, Clone)]
pub struct GradnormInstance {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl GradnormInstance {
    /// Base-class training rows of a small noisy synthetic world: 5 classes
    /// in 8 dimensions, 40 examples each, overlapping enough that the loss
    /// has a finite minimizer.
    pub fn default_synthetic(seed: u64) -> Result<Self> {
        let spec = SyntheticSpec {
            raw_dim: 8,
            base_classes: 5,
            novel_classes: 2,
            mode_count: 2,
            noise_sigma: 1.0,
            train_per_class: 40,
            test_per_class: 1,
            ..Default::default()
        };
        let world = make_synthetic(&spec, seed)?;
        let base = &world.split.base;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..world.train.len() {
            if let Some(j) = base.iter().position(|&c| c == world.train.label(i)) {
                features.push(world.train.features(i).to_vec());
                labels.push(j as u32);
            }
        }
        Ok(Self {
            features,
            labels,
            classes: base.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradnormPoint {
    pub radius: f64,
    pub grad_norm: f64,
    pub cosine_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradnormReport {
    pub points: Vec<GradnormPoint>,
    pub spearman: f64,
    /// `‖∇L(W_B)‖_F` actually reached.
    pub optimum_grad_norm: f64,
}

/// `1 − ⟨A, B⟩ / (‖A‖ ‖B‖)` on flattened matrices.
pub fn cosine_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    check_dim(a.rows(), b.rows())?;
    check_dim(a.cols(), b.cols())?;
    let denom = a.frobenius_norm() * b.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::invalid("cosine distance to a zero matrix"));
    }
    Ok(1.0 - frobenius_dot(a, b) / denom)
}

/// Samples `W = W_B + r·U` with `U` a uniform unit direction and `r`
/// log-uniform over three decades ending at `‖W_B‖_F`, and correlates the
/// gradient norm at `W` with its cosine distance to `W_B`.
pub fn gradnorm_distance_experiment(
    instance: &GradnormInstance,
    samples: usize,
    grad_tol: f64,
    seed: u64,
) -> Result<GradnormReport> {
    if samples < 2 {
        return Err(Error::invalid("need at least 2 samples for a rank correlation"));
    }
    let opt = train_to_optimum(
        &instance.features,
        &instance.labels,
        instance.classes,
        grad_tol,
        OPTIMUM_MAX_ITERS,
    )?;
    let wb = &opt.classifier;
    let top = wb.weights().frobenius_norm();
    if top == 0.0 {
        return Err(Error::invalid("the optimum is W = 0, cosine distance is undefined"));
    }
    let mut rng = SeededRng::new(seed);
    let mut points = Vec::with_capacity(samples);
    for _ in 0..samples {
        let radius = log_uniform(&mut rng, top * 1e-3, top);
        let w = perturb(wb, radius, &mut rng)?;
        points.push(GradnormPoint {
            radius,
            grad_norm: w
                .grad_wrt_weights(&instance.features, &instance.labels)?
                .frobenius_norm(),
            cosine_distance: cosine_distance(w.weights(), wb.weights())?,
        });
    }
    let g: Vec<f64> = points.iter().map(|p| p.grad_norm).collect();
    let c: Vec<f64> = points.iter().map(|p| p.cosine_distance).collect();
    Ok(GradnormReport {
        spearman: spearman(&g, &c)?,
        points,
        optimum_grad_norm: opt.grad_norm,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation: Pearson correlation of the ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least 2 points"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank correlation of NaN"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("rank correlation of a constant sequence"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Sizes of the three verification suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub lipschitz_instances: usize,
    pub caps: InstanceCaps,
    pub distance_instances: usize,
    pub distance_draws: usize,
    /// Gradient norm `W_B` is trained to, for both the distance bound and
    /// the grad-norm experiment.
    pub grad_tol: f64,
    pub gradnorm_samples: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            lipschitz_instances: 100,
            caps: InstanceCaps::default(),
            distance_instances: 20,
            distance_draws: 20,
            grad_tol: 1e-8,
            gradnorm_samples: 200,
            seed: 0,
        }
    }
}

/// Runs the Lipschitz, distance-bound and grad-norm suites.
pub fn run_theory_suite(config: &TheoryConfig) -> Result<TheoryReport> {
    let s = config.seed;
    let lipschitz = verify_lipschitz_bound(config.lipschitz_instances, &config.caps, derive_seed(s, &[1]))?;
    let distance = verify_distance_bound(
        config.distance_instances,
        config.distance_draws,
        config.grad_tol,
        derive_seed(s, &[2]),
    )?;
    let instance = GradnormInstance::default_synthetic(derive_seed(s, &[3]))?;
    let gradnorm =
        gradnorm_distance_experiment(&instance, config.gradnorm_samples, config.grad_tol, derive_seed(s, &[4]))?;
    Ok(TheoryReport {
        lipschitz,
        distance,
        gradnorm,
    })
}

/// Everything the `verify` command emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub lipschitz: Vec<HessianReport>,
    pub distance: DistanceVerification,
    pub gradnorm: GradnormReport,
}

impl TheoryReport {
    pub fn lipschitz_violations(&self) -> impl Iterator<Item = &HessianReport> {
        self.lipschitz.iter().filter(|r| !r.satisfied)
    }

    pub fn distance_violations(&self) -> impl Iterator<Item = &DistanceBoundReport> {
        self.distance.reports.iter().filter(|r| !r.satisfied)
    }

    pub fn worst_lipschitz_margin(&self) -> Option<f64> {
        self.lipschitz.iter().map(|r| r.margin).min_by(f64::total_cmp)
    }
}
