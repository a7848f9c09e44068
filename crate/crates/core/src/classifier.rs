//! Multiclass logistic regression without bias: `p_k ∝ exp(w_kᵀx)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::class_uniform_batches;
use crate::error::{check_dim, Error, Result};
use crate::io::{read_file, to_u32, write_file, ByteReader, ByteWriter};
use crate::numerics::{axpy, dot, norm_sq, softmax_into, top_k_unchecked, DenseMatrix, SeededRng};

/// Lower clamp for the probability inside `−log p_y`.
pub const LOG_CLAMP: f64 = 1e-300;

/// `K × d` weight matrix; row `k` is `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: DenseMatrix,
}

impl LinearClassifier {
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::invalid(format!(
                "classifier needs at least 2 classes, got {}",
                weights.rows()
            )));
        }
        if !weights.all_finite() {
            return Err(Error::invalid("classifier weights must be finite"));
        }
        Ok(Self { weights })
    }

    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        Self::new(DenseMatrix::zeros(classes, dim))
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut DenseMatrix {
        &mut self.weights
    }

    pub fn into_weights(self) -> DenseMatrix {
        self.weights
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.weights.matvec(x)
    }

    pub fn class_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.probs(x))
    }

    pub(crate) fn probs(&self, x: &[f64]) -> Vec<f64> {
        let z = self.weights.matvec_unchecked(x);
        let mut p = vec![0.0; z.len()];
        softmax_into(&z, &mut p);
        p
    }

    fn check_batch<R: AsRef<[f64]>>(&self, features: &[R], labels: &[u32]) -> Result<()> {
        check_dim(features.len(), labels.len())?;
        if features.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for x in features {
            check_dim(self.dim(), x.as_ref().len())?;
        }
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= self.classes()) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.classes()
            )));
        }
        Ok(())
    }

    /// Mean of `−log p_y` over the examples.
    pub fn nll_loss<R: AsRef<[f64]>>(&self, features: &[R], labels: &[u32]) -> Result<f64> {
        self.check_batch(features, labels)?;
        let total: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, &y)| -self.probs(x.as_ref())[y as usize].max(LOG_CLAMP).ln())
            .sum();
        Ok(total / features.len() as f64)
    }

    /// `g_k = (1/|S|) Σ (p_k − δ_yk) x`, stacked as a `K × d` matrix.
    pub fn grad_wrt_weights<R: AsRef<[f64]>>(
        &self,
        features: &[R],
        labels: &[u32],
    ) -> Result<DenseMatrix> {
        self.check_batch(features, labels)?;
        Ok(self.loss_and_grad(features, labels).1)
    }

    /// Loss and weight gradient in one pass; inputs must already be valid.
    pub(crate) fn loss_and_grad<R: AsRef<[f64]>>(
        &self,
        features: &[R],
        labels: &[u32],
    ) -> (f64, DenseMatrix) {
        let mut grad = DenseMatrix::zeros(self.classes(), self.dim());
        let mut loss = 0.0;
        let scale = 1.0 / features.len() as f64;
        for (x, &y) in features.iter().zip(labels) {
            let x = x.as_ref();
            let mut p = self.probs(x);
            loss -= p[y as usize].max(LOG_CLAMP).ln();
            p[y as usize] -= 1.0;
            for (k, r) in p.iter().enumerate() {
                if *r != 0.0 {
                    axpy(r * scale, x, grad.row_mut(k));
                }
            }
        }
        (loss * scale, grad)
    }

    /// `Wᵀ(p − δ_y)`: gradient of `−log p_y` with respect to the input.
    pub fn grad_wrt_features(&self, x: &[f64], y: u32) -> Result<Vec<f64>> {
        self.check_batch(&[x], &[y])?;
        let mut r = self.probs(x);
        r[y as usize] -= 1.0;
        Ok(self.weights.transpose_matvec_unchecked(&r))
    }

    /// `α = Σ_k (p_k − δ_yk)²`, which lies in `[0, 2]`.
    pub fn alpha_weight(&self, x: &[f64], y: u32) -> Result<f64> {
        self.check_batch(&[x], &[y])?;
        let mut r = self.probs(x);
        r[y as usize] -= 1.0;
        Ok(norm_sq(&r))
    }

    /// Top-1 prediction, lowest class index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::numerics::argmax(&self.logits(x)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.magic(MAGIC);
        w.u32(to_u32(self.classes(), "class count")?);
        w.u32(to_u32(self.dim(), "dimension")?);
        w.f32s(self.weights.data());
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let k = r.u32("class count")? as usize;
        let d = r.u32("dimension")? as usize;
        let data = r.f32s(k * d, "weights")?;
        r.finish()?;
        Self::new(DenseMatrix::new(k, d, data)?).map_err(|e| Error::parse(4, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

const MAGIC: &[u8; 4] = b"LSW1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop early once the full gradient norm falls below this; 0 disables.
    pub convergence_grad_tol: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 10_000,
            batch_size: 1000,
            weight_decay: 1e-4,
            seed: 0,
            convergence_grad_tol: 0.0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::invalid("iterations and batch_size must be >= 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        Ok(())
    }

    /// Minibatch size actually used: at most a tenth of the training set.
    pub fn effective_batch(&self, examples: usize) -> usize {
        self.batch_size.min((examples / 10).max(1))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: LinearClassifier,
    /// Gradient norm of the class-balanced, weight-decayed objective at the
    /// returned weights.
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Gradient of the objective SGD optimizes in expectation: classes weighted
/// equally, plus `λ_wd · W`.
fn balanced_gradient<R: AsRef<[f64]>>(
    clf: &LinearClassifier,
    features: &[R],
    labels: &[u32],
    weight_decay: f64,
) -> DenseMatrix {
    let k = clf.classes();
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y as usize] += 1;
    }
    let mut grad = DenseMatrix::zeros(k, clf.dim());
    for (x, &y) in features.iter().zip(labels) {
        let x = x.as_ref();
        let w = 1.0 / (k as f64 * counts[y as usize] as f64);
        let mut p = clf.probs(x);
        p[y as usize] -= 1.0;
        for (c, r) in p.iter().enumerate() {
            axpy(r * w, x, grad.row_mut(c));
        }
    }
    grad.add_scaled(weight_decay, clf.weights())
        .expect("same shape");
    grad
}

/// Minibatch SGD from `W = 0` with class-uniform sampling:
/// `W ← W − lr·(∇L_batch + λ_wd·W)`.
pub fn train_classifier<R: AsRef<[f64]>>(
    features: &[R],
    labels: &[u32],
    classes: usize,
    config: &ClassifierTrainConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let dim = features.first().map_or(0, |x| x.as_ref().len());
    let mut clf = LinearClassifier::zeros(classes, dim)?;
    clf.check_batch(features, labels)?;
    let batch = config.effective_batch(features.len());
    let mut batches = class_uniform_batches(
        labels,
        classes as u32,
        batch,
        SeededRng::new(config.seed),
    )?;
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(batch);
    let mut batch_y: Vec<u32> = Vec::with_capacity(batch);
    let mut done = config.iterations;
    for it in 0..config.iterations {
        batch_x.clear();
        batch_y.clear();
        for i in batches.next_batch() {
            batch_x.push(features[i].as_ref());
            batch_y.push(labels[i]);
        }
        let (loss, mut grad) = clf.loss_and_grad(&batch_x, &batch_y);
        grad.add_scaled(config.weight_decay, clf.weights())?;
        let w = clf.weights_mut();
        w.add_scaled(-config.learning_rate, &grad)?;
        if !loss.is_finite() || !w.all_finite() {
            return Err(Error::Diverged {
                iteration: it,
                message: format!(
                    "loss became {loss}; try a learning rate below {}",
                    config.learning_rate
                ),
            });
        }
        if config.convergence_grad_tol > 0.0 && (it + 1) % 100 == 0 {
            let g = balanced_gradient(&clf, features, labels, config.weight_decay);
            if g.frobenius_norm() <= config.convergence_grad_tol {
                done = it + 1;
                break;
            }
        }
    }
    let grad_norm = balanced_gradient(&clf, features, labels, config.weight_decay).frobenius_norm();
    Ok(TrainedClassifier {
        classifier: clf,
        grad_norm,
        iterations: done,
    })
}

#[derive(Debug, Clone)]
pub struct OptimumResult {
    pub classifier: LinearClassifier,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent with Armijo backtracking on the unregularized
/// mean log loss, until `‖∇‖_F ≤ grad_tol` or `max_iters`.
pub fn train_to_optimum<R: AsRef<[f64]>>(
    features: &[R],
    labels: &[u32],
    classes: usize,
    grad_tol: f64,
    max_iters: usize,
) -> Result<OptimumResult> {
    let dim = features.first().map_or(0, |x| x.as_ref().len());
    if classes * dim > 10_000 {
        return Err(Error::invalid(format!(
            "train_to_optimum is for small problems, K*d = {}",
            classes * dim
        )));
    }
    let mut clf = LinearClassifier::zeros(classes, dim)?;
    clf.check_batch(features, labels)?;
    // 1/L with L the curvature bound (1/n)Σ‖x‖² is a safe first step
    let lip = features.iter().map(|x| norm_sq(x.as_ref())).sum::<f64>() / features.len() as f64;
    let mut step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let (mut loss, mut grad) = clf.loss_and_grad(features, labels);
    for it in 0..max_iters {
        let gnorm_sq = norm_sq(grad.data());
        if gnorm_sq.sqrt() <= grad_tol {
            return Ok(OptimumResult {
                classifier: clf,
                loss,
                grad_norm: gnorm_sq.sqrt(),
                iterations: it,
                converged: true,
            });
        }
        step *= 2.0;
        loop {
            let mut trial = clf.clone();
            trial.weights_mut().add_scaled(-step, &grad)?;
            let (new_loss, new_grad) = trial.loss_and_grad(features, labels);
            if new_loss <= loss - 0.5 * step * gnorm_sq {
                clf = trial;
                loss = new_loss;
                grad = new_grad;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no representable descent left; report where we stand
                let g = norm_sq(grad.data()).sqrt();
                return Ok(OptimumResult {
                    classifier: clf,
                    loss,
                    grad_norm: g,
                    iterations: it,
                    converged: g <= grad_tol,
                });
            }
        }
    }
    let g = norm_sq(grad.data()).sqrt();
    Ok(OptimumResult {
        classifier: clf,
        loss,
        grad_norm: g,
        iterations: max_iters,
        converged: g <= grad_tol,
    })
}

/// Fraction of examples passing `filter` whose true label is among the top
/// `k` scores over all classes.
pub fn evaluate_topk<R, F>(
    clf: &LinearClassifier,
    features: &[R],
    labels: &[u32],
    k: usize,
    filter: F,
) -> Result<f64>
where
    R: AsRef<[f64]>,
    F: Fn(u32) -> bool,
{
    if k == 0 || k > clf.classes() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={}",
            clf.classes()
        )));
    }
    check_dim(features.len(), labels.len())?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        if !filter(y) {
            continue;
        }
        total += 1;
        let scores = clf.logits(x.as_ref())?;
        if top_k_unchecked(&scores, k).contains(&(y as usize)) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("no test examples pass the class filter"));
    }
    Ok(hits as f64 / total as f64)
}

/// Dot product of two flattened weight matrices.
pub(crate) fn frobenius_dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    dot(a.data(), b.data())
}
