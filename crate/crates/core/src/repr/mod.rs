//! Feature extractor training: joint SGD on an [`Mlp`] and a linear head,
//! minimizing classification loss plus an optional regularizer.

mod gradcheck;
mod losses;

pub use gradcheck::{
    check_gradient, gradient_check, random_instance, CheckedLoss, GradCheckInstance, DEFAULT_STEP,
};
pub use losses::{
    batch_sgm_grad, batch_sgm_loss, classification_grad, l1_feature_grad, l1_feature_loss,
    l2_feature_grad, l2_feature_loss, sgm_grad, sgm_loss, triplet_grad, triplet_loss, HeadGrads,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::LinearClassifier;
use crate::dataset::ExampleSource;
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpGrads};
use crate::numerics::{axpy, DenseMatrix, SeededRng};

pub const EXTRACTOR_MAGIC: &[u8; 4] = b"LSE1";

/// `[raw_dim, h₁, h₂, feat_dim]` for the synthetic world.
pub const DEFAULT_ARCHITECTURE: [usize; 4] = [32, 64, 64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Sgm,
    BatchSgm,
    L2Feat,
    L1Feat,
    Triplet,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 6] = [
        RegularizerKind::None,
        RegularizerKind::Sgm,
        RegularizerKind::BatchSgm,
        RegularizerKind::L2Feat,
        RegularizerKind::L1Feat,
        RegularizerKind::Triplet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Sgm => "sgm",
            RegularizerKind::BatchSgm => "batch_sgm",
            RegularizerKind::L2Feat => "l2_feat",
            RegularizerKind::L1Feat => "l1_feat",
            RegularizerKind::Triplet => "triplet",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regularizer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprLossConfig {
    pub regularizer: RegularizerKind,
    pub lambda: f64,
    /// Triplet margin γ.
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// The learning rate is multiplied by this every `lr_decay_period` epochs.
    pub lr_decay: f64,
    pub lr_decay_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Extra epochs at `learning_rate / 100` with the triplet term switched
    /// on, after `epochs` of classification-only training.
    pub triplet_epochs: usize,
    pub seed: u64,
}

impl Default for ReprLossConfig {
    fn default() -> Self {
        Self {
            regularizer: RegularizerKind::None,
            lambda: 0.0,
            margin: 1.0,
            epochs: 30,
            learning_rate: 0.05,
            lr_decay: 0.1,
            lr_decay_period: 10,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            triplet_epochs: 10,
            seed: 0,
        }
    }
}

impl ReprLossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.regularizer == RegularizerKind::Triplet && !(self.margin > 0.0) {
            return bad(format!("triplet margin must be > 0, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_period == 0 {
            return bad("epochs, batch_size and lr_decay_period must be positive".into());
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_period) as i32)
    }
}

/// What a training step minimizes: `classification · L_cls + λ · R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub classification: f64,
    pub regularizer: RegularizerKind,
    pub lambda: f64,
    pub margin: f64,
}

/// Objective value and gradients for a batch of raw inputs.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub loss: f64,
    pub extractor: MlpGrads,
    pub classifier: DenseMatrix,
}

/// Evaluates `objective` on a batch and backpropagates through the
/// extractor. `triplets` index into the batch and are only used by the
/// triplet regularizer.
pub fn objective_grads<R: AsRef<[f64]>>(
    net: &Mlp,
    clf: &LinearClassifier,
    inputs: &[R],
    labels: &[u32],
    triplets: &[(usize, usize, usize)],
    objective: &Objective,
) -> Result<ObjectiveGrads> {
    if net.output_dim() != clf.dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.dim(),
            actual: net.output_dim(),
        });
    }
    let traces = inputs
        .iter()
        .map(|x| net.forward_trace(x.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let phis: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();

    let mut head = classification_grad(clf, &phis, labels)?;
    head.loss *= objective.classification;
    head.d_weights.scale(objective.classification);
    for d in &mut head.d_features {
        d.iter_mut().for_each(|v| *v *= objective.classification);
    }

    let lambda = objective.lambda;
    match objective.regularizer {
        RegularizerKind::None => {}
        RegularizerKind::Sgm => head.add_scaled(lambda, &sgm_grad(clf, &phis, labels)?),
        RegularizerKind::BatchSgm => head.add_scaled(lambda, &batch_sgm_grad(clf, &phis, labels)?),
        RegularizerKind::L2Feat | RegularizerKind::L1Feat => {
            let (loss, grads) = if objective.regularizer == RegularizerKind::L2Feat {
                l2_feature_grad(&phis)?
            } else {
                l1_feature_grad(&phis)?
            };
            head.loss += lambda * loss;
            for (d, g) in head.d_features.iter_mut().zip(&grads) {
                axpy(lambda, g, d);
            }
        }
        RegularizerKind::Triplet => {
            if !triplets.is_empty() {
                let scale = lambda / triplets.len() as f64;
                for &(a, p, n) in triplets {
                    let (loss, [ga, gp, gn]) =
                        triplet_grad(&phis[a], &phis[p], &phis[n], objective.margin)?;
                    head.loss += scale * loss;
                    axpy(scale, &ga, &mut head.d_features[a]);
                    axpy(scale, &gp, &mut head.d_features[p]);
                    axpy(scale, &gn, &mut head.d_features[n]);
                }
            }
        }
    }

    let mut extractor = net.zero_grads();
    for (trace, d) in traces.iter().zip(&head.d_features) {
        net.backward(trace, d, &mut extractor);
    }
    Ok(ObjectiveGrads {
        loss: head.loss,
        extractor,
        classifier: head.d_weights,
    })
}

/// For every batch member with another same-class member, one triplet
/// (anchor, positive, negative) with positive and negative drawn uniformly.
pub fn sample_triplets(labels: &[u32], rng: &mut SeededRng) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (a, &y) in labels.iter().enumerate() {
        let pos: Vec<usize> = (0..labels.len()).filter(|&j| j != a && labels[j] == y).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != y).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let p = pos[rng.below(pos.len())];
        let n = neg[rng.below(neg.len())];
        out.push((a, p, n));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ReprTrainResult {
    pub extractor: Mlp,
    pub classifier: LinearClassifier,
    /// Mean minibatch objective per epoch, including any triplet epochs.
    pub loss_trace: Vec<f64>,
}

/// Trains extractor and head on the examples of `classes`, which are
/// re-indexed to `[0, classes.len())` in the given order.
pub fn train_representation<S: ExampleSource + ?Sized>(
    data: &S,
    classes: &[u32],
    architecture: &[usize],
    config: &ReprLossConfig,
) -> Result<ReprTrainResult> {
    config.validate()?;
    if classes.len() < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if architecture.first() != Some(&data.dim()) {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            actual: architecture.first().copied().unwrap_or(0),
        });
    }
    let mut remap = vec![None; data.class_count() as usize];
    for (j, &c) in classes.iter().enumerate() {
        let slot = remap
            .get_mut(c as usize)
            .ok_or_else(|| Error::invalid(format!("class {c} out of range")))?;
        if slot.is_some() {
            return Err(Error::invalid(format!("class {c} listed twice")));
        }
        *slot = Some(j as u32);
    }
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    for i in 0..data.len() {
        if let Some(j) = remap[data.label(i) as usize] {
            indices.push(i);
            labels.push(j);
        }
    }
    if indices.is_empty() {
        return Err(Error::invalid("no examples of the requested classes"));
    }

    let mut rng = SeededRng::new(config.seed);
    let mut net = Mlp::new(architecture, &mut rng)?;
    let mut clf = LinearClassifier::zeros(classes.len(), net.output_dim())?;
    let mut net_velocity = net.zero_grads();
    let mut clf_velocity = DenseMatrix::zeros(clf.classes(), clf.dim());

    let triplet_phase = config.regularizer == RegularizerKind::Triplet;
    let total_epochs = config.epochs + if triplet_phase { config.triplet_epochs } else { 0 };
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut loss_trace = Vec::with_capacity(total_epochs);
    let mut iteration = 0;
    for epoch in 0..total_epochs {
        let (lr, objective) = if epoch < config.epochs {
            let regularizer = if triplet_phase { RegularizerKind::None } else { config.regularizer };
            let objective = Objective {
                classification: 1.0,
                regularizer,
                lambda: config.lambda,
                margin: config.margin,
            };
            (config.learning_rate_at(epoch), objective)
        } else {
            let objective = Objective {
                classification: 1.0,
                regularizer: RegularizerKind::Triplet,
                lambda: config.lambda,
                margin: config.margin,
            };
            (config.learning_rate / 100.0, objective)
        };
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&k| data.features(indices[k])).collect();
            let ys: Vec<u32> = chunk.iter().map(|&k| labels[k]).collect();
            let triplets = if objective.regularizer == RegularizerKind::Triplet {
                sample_triplets(&ys, &mut rng)
            } else {
                Vec::new()
            };
            let g = objective_grads(&net, &clf, &inputs, &ys, &triplets, &objective)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    message: format!("objective is {}; lower the learning rate or lambda", g.loss),
                });
            }
            net.sgd_step(&g.extractor, &mut net_velocity, lr, config.momentum, config.weight_decay);
            let w = clf.weights_mut();
            for ((wi, gi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(g.classifier.data())
                .zip(clf_velocity.data_mut())
            {
                *vi = config.momentum * *vi + gi + config.weight_decay * *wi;
                *wi -= lr * *vi;
            }
            if !net.all_finite() || !clf.weights().all_finite() {
                return Err(Error::Diverged {
                    iteration,
                    message: "parameters became non-finite; lower the learning rate".into(),
                });
            }
            epoch_loss += g.loss;
            batches += 1;
            iteration += 1;
        }
        loss_trace.push(epoch_loss / batches as f64);
    }
    Ok(ReprTrainResult {
        extractor: net,
        classifier: clf,
        loss_trace,
    })
}
