//! Fully connected network with a rectifier after every layer, including the
//! last, so outputs are always non-negative. Serves as both the feature
//! extractor and the analogy generator.

use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::io::{read_file, to_u32, write_file, ByteReader, ByteWriter};
use crate::numerics::{axpy, DenseMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has the input at least")
    }

    /// Smallest |pre-activation| seen; small values mean a rectifier kink is
    /// within reach of a finite-difference step.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flatten()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gradient (or velocity) with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.scale(c);
            l.bias.iter_mut().for_each(|b| *b *= c);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.data());
        out.extend_from_slice(&l.bias);
    }
    out
}

impl Mlp {
    /// Uniform fan-in initialization: weights in `±sqrt(6 / fan_in)`, zero
    /// biases.
    pub fn new(sizes: &[usize], rng: &mut SeededRng) -> Result<Self> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                Layer {
                    weights: DenseMatrix::new(fan_out, fan_in, data).expect("finite init"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weights: DenseMatrix::zeros(w[1], w[0]),
                    bias: vec![0.0; w[1]],
                })
                .collect(),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim(l.weights.rows(), l.bias.len())?;
            if i > 0 {
                check_dim(layers[i - 1].weights.rows(), l.weights.cols())?;
            }
            if !l.weights.all_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.cols()];
        s.extend(self.layers.iter().map(|l| l.weights.rows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut z = l.weights.matvec_unchecked(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi = (*zi + b).max(0.0);
            }
            h = z;
        }
        h
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.trace_unchecked(x))
    }

    pub(crate) fn trace_unchecked(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut z = l.weights.matvec_unchecked(acts.last().expect("input"));
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi += b;
            }
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
            pre.push(z);
        }
        Trace { acts, pre }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Accumulates parameter gradients for `∂L/∂output = grad_out` into
    /// `grads` and returns `∂L/∂input`. The rectifier derivative at 0 is 0.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            let g = &mut grads.layers[l];
            let input = &trace.acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, g.weights.row_mut(o));
                    g.bias[o] += d;
                }
            }
            delta = layer.weights.transpose_matvec_unchecked(&delta);
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.param_count(), flat.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + m]);
            at += m;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.all_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Momentum SGD with L2 decay added to the gradient:
    /// `v ← μv + (g + λθ)`, `θ ← θ − lr·v`.
    pub fn sgd_step(
        &mut self,
        grads: &MlpGrads,
        velocity: &mut MlpGrads,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        for ((p, g), v) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut velocity.layers)
        {
            let step = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
                for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = momentum * *vi + gi + weight_decay * *pi;
                    *pi -= lr * *vi;
                }
            };
            step(p.weights.data_mut(), g.weights.data(), v.weights.data_mut());
            step(&mut p.bias, &g.bias, &mut v.bias);
        }
    }

    pub fn to_bytes(&self, magic: &[u8; 4]) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.magic(magic);
        let sizes = self.sizes();
        w.u32(to_u32(sizes.len(), "layer count")?);
        for s in &sizes {
            w.u32(to_u32(*s, "layer size")?);
        }
        for l in &self.layers {
            w.f32s(l.weights.data());
            w.f32s(&l.bias);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(magic)?;
        let at = r.offset();
        let count = r.u32("layer count")? as usize;
        if count < 2 {
            return Err(Error::parse(at, format!("need at least 2 layer sizes, got {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let s = r.u32("layer size")? as usize;
            if s == 0 {
                return Err(Error::parse(at, "zero layer size"));
            }
            sizes.push(s);
        }
        let mut layers = Vec::with_capacity(count - 1);
        for w in sizes.windows(2) {
            let weights = r.f32s(w[0] * w[1], "weights")?;
            let bias = r.f32s(w[1], "bias")?;
            layers.push(Layer {
                weights: DenseMatrix::new(w[1], w[0], weights)?,
                bias,
            });
        }
        r.finish()?;
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4]) -> Result<()> {
        write_file(path, &self.to_bytes(magic)?)
    }

    pub fn load(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, magic)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::invalid(format!(
            "layer sizes must list at least input and output, all positive: {sizes:?}"
        )));
    }
    Ok(())
}
