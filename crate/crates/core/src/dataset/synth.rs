//! A synthetic world whose classes share modes of variation.
//!
//! Every example is `max(0, μ_c + t_m + σ·ε)`: a class mean, one of `M` mode
//! offsets that are the same for every class, and isotropic noise. Moving an
//! example from mode `m₁` to `m₂` is the same translation `t_{m₂} − t_{m₁}`
//! in every class, which is exactly the structure analogy-based
//! hallucination exploits.

use serde::{Deserialize, Serialize};

use super::{split_classes, ClassSplit, FeatureDataset};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, DenseMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub raw_dim: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub mode_count: usize,
    /// Standard deviation of each class-mean coordinate.
    pub mean_scale: f64,
    /// Standard deviation of each mode-offset coordinate.
    pub mode_scale: f64,
    pub noise_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            raw_dim: 32,
            base_classes: 40,
            novel_classes: 20,
            mode_count: 8,
            mean_scale: 1.0,
            mode_scale: 1.0,
            noise_sigma: 0.5,
            train_per_class: 200,
            test_per_class: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn class_count(&self) -> usize {
        self.base_classes + self.novel_classes
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.raw_dim == 0 || self.mode_count == 0 {
            return Err(Error::invalid("raw_dim and mode_count must be positive"));
        }
        if self.base_classes < 2 || self.novel_classes < 2 {
            return Err(Error::invalid("need at least 2 base and 2 novel classes"));
        }
        if !positive(self.mean_scale) || !positive(self.mode_scale) {
            return Err(Error::invalid("mean_scale and mode_scale must be > 0"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid("per-class example counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub train_modes: Vec<u32>,
    pub test_modes: Vec<u32>,
    /// Row `c` is `μ_c`.
    pub class_means: DenseMatrix,
    /// Row `m` is `t_m`.
    pub mode_vectors: DenseMatrix,
    pub split: ClassSplit,
}

impl SyntheticWorld {
    /// Noise-free point for (class, mode) before rectification.
    pub fn clean_point(&self, class: u32, mode: u32) -> Vec<f64> {
        self.class_means
            .row(class as usize)
            .iter()
            .zip(self.mode_vectors.row(mode as usize))
            .map(|(a, b)| a + b)
            .collect()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    DenseMatrix::new(rows, cols, data).expect("finite gaussian draws")
}

fn draw_examples(
    means: &DenseMatrix,
    modes: &DenseMatrix,
    per_class: usize,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<(FeatureDataset, Vec<u32>)> {
    let (k, d) = (means.rows(), means.cols());
    let mut data = Vec::with_capacity(k * per_class * d);
    let mut labels = Vec::with_capacity(k * per_class);
    let mut mode_ids = Vec::with_capacity(k * per_class);
    for c in 0..k {
        for _ in 0..per_class {
            let m = rng.below(modes.rows());
            for j in 0..d {
                let v = means.get(c, j) + modes.get(m, j) + sigma * rng.normal();
                data.push(v.max(0.0));
            }
            labels.push(c as u32);
            mode_ids.push(m as u32);
        }
    }
    let ds = FeatureDataset::new(
        DenseMatrix::new(labels.len(), d, data)?,
        labels,
        k as u32,
    )?;
    Ok((ds, mode_ids))
}

pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticWorld> {
    spec.validate()?;
    let k = spec.class_count();
    let mut rng = SeededRng::new(seed);
    let class_means = gaussian_matrix(k, spec.raw_dim, spec.mean_scale, &mut rng);
    let mode_vectors = gaussian_matrix(spec.mode_count, spec.raw_dim, spec.mode_scale, &mut rng);
    let (train, train_modes) = draw_examples(
        &class_means,
        &mode_vectors,
        spec.train_per_class,
        spec.noise_sigma,
        &mut rng,
    )?;
    let (test, test_modes) = draw_examples(
        &class_means,
        &mode_vectors,
        spec.test_per_class,
        spec.noise_sigma,
        &mut rng,
    )?;
    let split = split_classes(
        k as u32,
        spec.base_classes as f64 / k as f64,
        derive_seed(seed, &[0x5917]),
    )?;
    Ok(SyntheticWorld {
        spec: spec.clone(),
        train,
        test,
        train_modes,
        test_modes,
        class_means,
        mode_vectors,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ExampleSource;

    fn small(modes: usize, sigma: f64) -> SyntheticSpec {
        SyntheticSpec {
            raw_dim: 6,
            base_classes: 3,
            novel_classes: 2,
            mode_count: modes,
            noise_sigma: sigma,
            train_per_class: 40,
            test_per_class: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_world_shape() {
        let w = make_synthetic(&SyntheticSpec::default(), 1).unwrap();
        assert_eq!(w.train.len(), 60 * 200);
        assert_eq!(w.test.len(), 60 * 50);
        assert_eq!(w.split.base.len(), 40);
        assert_eq!(w.split.novel.len(), 20);
        assert!(w.train.feature_matrix().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_mode_no_noise_is_constant_per_class() {
        let w = make_synthetic(&small(1, 0.0), 3).unwrap();
        for (c, idx) in w.train.indices_by_class().iter().enumerate() {
            let first = w.train.features(idx[0]);
            assert!(idx.iter().all(|&i| w.train.features(i) == first), "class {c}");
        }
    }

    #[test]
    fn two_modes_differ_by_shared_translation() {
        let w = make_synthetic(&small(2, 0.0), 4).unwrap();
        let shift: Vec<f64> = w
            .mode_vectors
            .row(1)
            .iter()
            .zip(w.mode_vectors.row(0))
            .map(|(a, b)| a - b)
            .collect();
        for (c, idx) in w.train.indices_by_class().iter().enumerate() {
            let mut distinct: Vec<&[f64]> = Vec::new();
            for &i in idx {
                let f = w.train.features(i);
                if !distinct.contains(&f) {
                    distinct.push(f);
                }
                let expected: Vec<f64> = w
                    .clean_point(c as u32, w.train_modes[i])
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect();
                assert_eq!(f, expected.as_slice());
            }
            assert!(distinct.len() <= 2);
            let a = w.clean_point(c as u32, 1);
            let b = w.clean_point(c as u32, 0);
            for j in 0..6 {
                assert!(((a[j] - b[j]) - shift[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_modes_give_identical_differences_across_classes() {
        let w = make_synthetic(&small(4, 0.0), 5).unwrap();
        for a in 0..5u32 {
            for b in 0..5u32 {
                for m1 in 0..4 {
                    for m2 in 0..4 {
                        let da: Vec<f64> = w
                            .clean_point(a, m2)
                            .iter()
                            .zip(w.clean_point(a, m1))
                            .map(|(x, y)| x - y)
                            .collect();
                        let db: Vec<f64> = w
                            .clean_point(b, m2)
                            .iter()
                            .zip(w.clean_point(b, m1))
                            .map(|(x, y)| x - y)
                            .collect();
                        for (x, y) in da.iter().zip(&db) {
                            assert!((x - y).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn empirical_means_follow_law_of_large_numbers() {
        let spec = SyntheticSpec {
            raw_dim: 8,
            base_classes: 2,
            novel_classes: 2,
            mode_count: 3,
            mean_scale: 3.0,
            mode_scale: 0.2,
            noise_sigma: 0.1,
            train_per_class: 20_000,
            test_per_class: 1,
        };
        let w = make_synthetic(&spec, 8).unwrap();
        let n = spec.train_per_class as f64;
        let mut checked = 0;
        for (c, idx) in w.train.indices_by_class().iter().enumerate() {
            for j in 0..spec.raw_dim {
                let t: Vec<f64> = (0..3).map(|m| w.mode_vectors.get(m, j)).collect();
                let lowest = w.class_means.get(c, j) + t.iter().cloned().fold(f64::INFINITY, f64::min);
                // only coordinates where rectification is a > 8 sigma event
                if lowest < 8.0 * spec.noise_sigma {
                    continue;
                }
                let t_mean = t.iter().sum::<f64>() / 3.0;
                let t_var = t.iter().map(|v| (v - t_mean).powi(2)).sum::<f64>() / 3.0;
                let sd = (spec.noise_sigma.powi(2) + t_var).sqrt();
                let emp = idx.iter().map(|&i| w.train.features(i)[j]).sum::<f64>() / n;
                let expected = w.class_means.get(c, j) + t_mean;
                assert!((emp - expected).abs() <= 3.0 * sd / n.sqrt(), "c{c} j{j}");
                checked += 1;
            }
        }
        assert!(checked >= 5);
    }
}
