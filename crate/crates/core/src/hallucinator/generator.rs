use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mining::{AnalogyQuadruplet, CentroidSet};
use crate::classifier::{LinearClassifier, LOG_CLAMP};
use crate::error::{check_dim, Error, Result};
use crate::mlp::Mlp;
use crate::numerics::{norm, SeededRng};

pub const GENERATOR_MAGIC: &[u8; 4] = b"LSG1";

/// Three fully connected layers `[3d, h, h, d]`, rectified throughout.
/// Maps `[seed, c₁, c₂]` to the seed moved along `c₂ − c₁`'s analogy.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    net: Mlp,
}

impl GeneratorNet {
    pub fn new(feat_dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::from_mlp(Mlp::new(&[3 * feat_dim, hidden, hidden, feat_dim], rng)?)
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.layers().len() != 3 || net.input_dim() != 3 * net.output_dim() {
            return Err(Error::invalid(format!(
                "generator needs layers [3d, h, h, d], got {:?}",
                net.sizes()
            )));
        }
        Ok(Self { net })
    }

    pub fn feat_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path, GENERATOR_MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_mlp(Mlp::load(path, GENERATOR_MAGIC)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.net.to_bytes(GENERATOR_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_mlp(Mlp::from_bytes(bytes, GENERATOR_MAGIC)?)
    }
}

fn concat(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(a.len() * 3);
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x.extend_from_slice(c);
    x
}

/// `G([φ(x), c₁, c₂])`: a new example for `φ(x)`'s class.
pub fn hallucinate(g: &GeneratorNet, seed: &[f64], c1: &[f64], c2: &[f64]) -> Result<Vec<f64>> {
    let d = g.feat_dim();
    check_dim(d, seed.len())?;
    check_dim(d, c1.len())?;
    check_dim(d, c2.len())?;
    Ok(g.net.forward_unchecked(&concat(seed, c1, c2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorTrainConfig {
    /// Weight of the mean squared error against `c^a₂`.
    pub lambda: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Minibatch gradients with a larger global norm are scaled down to
    /// it; 0 disables clipping.
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            hidden: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.01,
            max_grad_norm: 5.0,
            epochs: 100,
            batch_size: 16,
        }
    }
}

impl GeneratorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning_rate must be > 0 and momentum in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::invalid("max_grad_norm must be >= 0"));
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden, epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// One generator training example: input `[c^a₁, c^b₁, c^b₂]`, target `c^a₂`.
#[derive(Debug, Clone)]
struct Sample {
    input: Vec<f64>,
    target: Vec<f64>,
    head: u32,
}

#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    pub generator: GeneratorNet,
    /// Mean minibatch objective per epoch.
    pub loss_trace: Vec<f64>,
    /// Mean squared error part of the final epoch, without `λ`.
    pub final_mse: f64,
}

/// RMS coordinate over all inputs and targets; 1 for all-zero data.
fn feature_scale(samples: &[Sample]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in samples {
        sum += s.input.iter().chain(&s.target).map(|v| v * v).sum::<f64>();
        count += s.input.len() + s.target.len();
    }
    let rms = (sum / count.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// The network computing `scale · net(x / scale)`.
fn fold_scale(net: Mlp, scale: f64) -> Result<Mlp> {
    let mut layers = net.layers().to_vec();
    let last = layers.len() - 1;
    layers[0].weights.scale(1.0 / scale);
    layers[last].weights.scale(scale);
    layers[last].bias.iter_mut().for_each(|b| *b *= scale);
    Mlp::from_layers(layers)
}

fn centroid<'a>(set: &'a CentroidSet, class: u32, i: usize) -> Result<&'a [f64]> {
    set.get(class)
        .and_then(|c| c.centroids.get(i))
        .map(Vec::as_slice)
        .ok_or_else(|| Error::invalid(format!("no centroid {i} for class {class}")))
}

/// Trains G on the mined analogies with the base classifier frozen.
/// `head_classes[j]` is the class scored by row `j` of `clf`.
pub fn train_generator(
    quads: &[AnalogyQuadruplet],
    centroids: &CentroidSet,
    clf: &LinearClassifier,
    head_classes: &[u32],
    config: &GeneratorTrainConfig,
    seed: u64,
) -> Result<TrainedGenerator> {
    config.validate()?;
    if quads.is_empty() {
        return Err(Error::invalid("no analogy quadruplets to train on"));
    }
    check_dim(clf.classes(), head_classes.len())?;
    check_dim(clf.dim(), centroids.dim)?;
    let head: HashMap<u32, u32> = head_classes
        .iter()
        .enumerate()
        .map(|(j, &c)| (c, j as u32))
        .collect();
    let samples = quads
        .iter()
        .map(|q| {
            let h = *head
                .get(&q.a)
                .ok_or_else(|| Error::invalid(format!("class {} not in the base head", q.a)))?;
            Ok(Sample {
                input: concat(
                    centroid(centroids, q.a, q.i1)?,
                    centroid(centroids, q.b, q.j1)?,
                    centroid(centroids, q.b, q.j2)?,
                ),
                target: centroid(centroids, q.a, q.i2)?.to_vec(),
                head: h,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let d = centroids.dim;
    // G is trained on features divided by their RMS coordinate and the
    // scale is folded back into the outer layers afterwards; rectifiers
    // commute with positive scaling, so the result acts on raw features
    let scale = feature_scale(&samples);
    let samples: Vec<Sample> = samples
        .into_iter()
        .map(|s| Sample {
            input: s.input.iter().map(|v| v / scale).collect(),
            target: s.target.iter().map(|v| v / scale).collect(),
            head: s.head,
        })
        .collect();
    let mut rng = SeededRng::new(seed);
    let mut g = GeneratorNet::new(d, config.hidden, &mut rng)?;
    let mut velocity = g.net.zero_grads();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut final_mse = 0.0;
    let mut iteration = 0;
    let s2 = scale * scale;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let (mut epoch_loss, mut epoch_mse, mut batches) = (0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut grads = g.net.zero_grads();
            let (mut loss, mut mse) = (0.0, 0.0);
            for &k in chunk {
                let s = &samples[k];
                let trace = g.net.trace_unchecked(&s.input);
                let out = trace.output();
                let mut grad_out = vec![0.0; d];
                let mut sq = 0.0;
                for ((go, o), t) in grad_out.iter_mut().zip(out).zip(&s.target) {
                    sq += (o - t) * (o - t);
                    *go = config.lambda * 2.0 * s2 * (o - t) / d as f64;
                }
                sq *= s2;
                let raw: Vec<f64> = out.iter().map(|v| v * scale).collect();
                let mut r = clf.probs(&raw);
                let nll = -r[s.head as usize].max(LOG_CLAMP).ln();
                r[s.head as usize] -= 1.0;
                for (go, v) in grad_out.iter_mut().zip(clf.weights().transpose_matvec_unchecked(&r)) {
                    *go = (*go + scale * v) * inv;
                }
                g.net.backward(&trace, &grad_out, &mut grads);
                mse += sq / d as f64 * inv;
                loss += (config.lambda * sq / d as f64 + nll) * inv;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    message: format!("generator objective is {loss}; lower the learning rate"),
                });
            }
            if config.max_grad_norm > 0.0 {
                let n = norm(&grads.flatten());
                if n > config.max_grad_norm {
                    grads.scale(config.max_grad_norm / n);
                }
            }
            g.net
                .sgd_step(&grads, &mut velocity, config.learning_rate, config.momentum, config.weight_decay);
            epoch_loss += loss;
            epoch_mse += mse;
            batches += 1;
            iteration += 1;
        }
        loss_trace.push(epoch_loss / batches as f64);
        final_mse = epoch_mse / batches as f64;
    }
    if !g.net.all_finite() {
        return Err(Error::Diverged {
            iteration,
            message: "generator parameters became non-finite".into(),
        });
    }
    let g = GeneratorNet::from_mlp(fold_scale(g.net, scale)?)?;
    Ok(TrainedGenerator {
        generator: g,
        loss_trace,
        final_mse,
    })
}
