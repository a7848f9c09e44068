//! The two-phase protocol: learn a representation on the base classes,
//! then repeatedly fit a classifier over base and novel classes from `n`
//! examples per novel class and score it on held-out test examples.
//!
//! Hyperparameters are chosen on the first halves of the base and novel
//! classes (C¹); reported numbers come from the second halves (C²).

mod report;

pub use report::{emit_csv, emit_table, ReportFormat};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_topk, train_classifier, ClassifierTrainConfig};
use crate::dataset::{sample_low_shot, ClassSplit, ExampleSource, FeatureDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::hallucinator::{augment_low_shot, build_hallucinator, Hallucinator, HallucinatorConfig};
use crate::io::write_json;
use crate::mlp::Mlp;
use crate::numerics::derive_seed;
use crate::repr::{train_representation, RegularizerKind, ReprLossConfig, DEFAULT_ARCHITECTURE};

/// One row of the comparison: a representation plus, optionally,
/// hallucination in the low-shot phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub regularizer: RegularizerKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub hallucinate: bool,
    /// Fixed `k_min`; when absent it is cross-validated over the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
}

impl MethodSpec {
    pub fn plain(name: &str, regularizer: RegularizerKind, lambda: f64) -> Self {
        Self {
            name: name.into(),
            regularizer,
            lambda,
            hallucinate: false,
            k_min: None,
        }
    }

    fn representation_key(&self) -> (RegularizerKind, u64) {
        let lambda = if self.regularizer == RegularizerKind::None { 0.0 } else { self.lambda };
        (self.regularizer, lambda.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub shots: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<MethodSpec>,
    /// Extractor layer sizes; the first must equal the raw dimension.
    pub architecture: Vec<usize>,
    /// Shared by every representation; `regularizer` and `lambda` are
    /// replaced by each method's own.
    pub representation: ReprLossConfig,
    pub hallucinator: HallucinatorConfig,
    /// Low-shot classifier; `weight_decay` and `seed` are overridden.
    pub classifier: ClassifierTrainConfig,
    pub weight_decay_grid: Vec<f64>,
    pub k_min_grid: Vec<usize>,
    /// Trials averaged per grid point during cross-validation.
    pub cv_trials: usize,
    pub master_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            shots: vec![1, 2, 5, 10, 20],
            trials: 5,
            methods: vec![
                MethodSpec::plain("baseline", RegularizerKind::None, 0.0),
                MethodSpec::plain("sgm", RegularizerKind::Sgm, 1e-4),
                MethodSpec::plain("l2_feat", RegularizerKind::L2Feat, 1e-4),
                MethodSpec {
                    name: "hallucination".into(),
                    regularizer: RegularizerKind::None,
                    lambda: 0.0,
                    hallucinate: true,
                    k_min: None,
                },
            ],
            architecture: DEFAULT_ARCHITECTURE.to_vec(),
            representation: ReprLossConfig::default(),
            hallucinator: HallucinatorConfig::default(),
            classifier: ClassifierTrainConfig {
                learning_rate: 0.1,
                iterations: 1000,
                batch_size: 256,
                weight_decay: 0.0,
                seed: 0,
                convergence_grad_tol: 0.0,
            },
            weight_decay_grid: vec![0.001, 0.01, 0.1, 1.0],
            k_min_grid: vec![5, 10, 20],
            cv_trials: 1,
            master_seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::invalid("shots must be a non-empty list of values >= 1"));
        }
        if self.trials == 0 || self.cv_trials == 0 {
            return Err(Error::invalid("trials and cv_trials must be >= 1"));
        }
        if self.weight_decay_grid.is_empty()
            || self.weight_decay_grid.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid("weight_decay_grid must be non-empty and >= 0"));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("method names must be unique"));
        }
        for m in &self.methods {
            if m.k_min == Some(0) {
                return Err(Error::invalid(format!("method {}: k_min must be >= 1", m.name)));
            }
            if m.hallucinate && m.k_min.is_none() && (self.k_min_grid.is_empty() || self.k_min_grid.contains(&0)) {
                return Err(Error::invalid(format!(
                    "method {} cross-validates k_min but k_min_grid is empty or has 0",
                    m.name
                )));
            }
        }
        self.representation.validate()?;
        self.hallucinator.generator.validate()?;
        self.hallucinator.clusters.validate()?;
        self.classifier.validate()
    }
}

/// Accuracies of one trained classifier; top-5 means top-`min(5, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracies {
    pub novel_top1: f64,
    pub novel_top5: f64,
    pub base_top1: f64,
    pub base_top5: f64,
    pub all_top1: f64,
    pub all_top5: f64,
}

impl Accuracies {
    fn fields(&self) -> [f64; 6] {
        [
            self.novel_top1,
            self.novel_top5,
            self.base_top1,
            self.base_top5,
            self.all_top1,
            self.all_top5,
        ]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self {
            novel_top1: f[0],
            novel_top5: f[1],
            base_top1: f[2],
            base_top5: f[3],
            all_top1: f[4],
            all_top5: f[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub accuracy: Accuracies,
    pub novel_test_count: usize,
    pub base_test_count: usize,
    /// Hallucinated examples added to the training set.
    pub generated: usize,
}

/// Hyperparameters of the low-shot phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: GridPoint,
    /// Mean all-class top-5 on C¹ per grid point, in grid order.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub chosen: GridPoint,
    pub trials: Vec<TrialResult>,
    pub mean: Accuracies,
    /// Sample standard deviation over trials; 0 for a single trial.
    pub std: Accuracies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub methods: Vec<String>,
    /// Method name → shot count → result.
    pub results: BTreeMap<String, BTreeMap<usize, ShotResult>>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn get(&self, method: &str, n: usize) -> Option<&ShotResult> {
        self.results.get(method)?.get(&n)
    }
}

/// Mean and sample standard deviation of each accuracy.
pub fn summarize(trials: &[TrialResult]) -> (Accuracies, Accuracies) {
    let t = trials.len() as f64;
    // shifted by the first trial so that identical trials reproduce exactly
    let first = trials.first().map(|r| r.accuracy.fields()).unwrap_or_default();
    let mut shift = [0.0; 6];
    for r in trials {
        for ((m, v), f) in shift.iter_mut().zip(r.accuracy.fields()).zip(first) {
            *m += v - f;
        }
    }
    let mut mean = first;
    for (m, s) in mean.iter_mut().zip(shift) {
        *m += s / t;
    }
    let mut var = [0.0; 6];
    if trials.len() > 1 {
        for r in trials {
            for ((s, v), m) in var.iter_mut().zip(r.accuracy.fields()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = (*s / (t - 1.0)).sqrt());
    }
    (Accuracies::from_fields(mean), Accuracies::from_fields(var))
}

/// `φ(x)` for every row.
pub fn extract_features(extractor: &Mlp, data: &FeatureDataset) -> Result<FeatureDataset> {
    if extractor.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: extractor.input_dim(),
            actual: data.dim(),
        });
    }
    data.map_rows(extractor.output_dim(), |x| extractor.forward_unchecked(x))
}

/// How the low-shot classifier of one trial is built.
#[derive(Debug, Clone, Copy)]
pub struct LowShotMethod<'a> {
    pub classifier: &'a ClassifierTrainConfig,
    pub weight_decay: f64,
    /// Generator and centroids, with `k_min`.
    pub hallucination: Option<(&'a Hallucinator, usize)>,
}

fn test_rows<'a, S: ExampleSource>(test: &'a S, space: &LabelSpace) -> (Vec<&'a [f64]>, Vec<u32>) {
    let joint = space.joint_index(test.class_count());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..test.len() {
        if let Some(j) = joint.get(test.label(i) as usize).copied().flatten() {
            rows.push(test.features(i));
            labels.push(j);
        }
    }
    (rows, labels)
}

/// One trial: sample `n` examples per novel class of `space` from `train`,
/// optionally hallucinate up to `k_min`, fit the joint classifier and score
/// it on the test examples of `space`.
pub fn run_low_shot_phase<S: ExampleSource>(
    train: &S,
    test: &S,
    space: &LabelSpace,
    n: usize,
    trial: usize,
    trial_seed: u64,
    method: &LowShotMethod,
) -> Result<TrialResult> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            actual: test.dim(),
        });
    }
    let mut set = sample_low_shot(train, space, n, derive_seed(trial_seed, &[0]))?;
    if let Some((h, k_min)) = method.hallucination {
        set = augment_low_shot(
            &set,
            train,
            &h.generator.generator,
            &h.centroids,
            k_min,
            derive_seed(trial_seed, &[1]),
        )?;
    }
    let (rows, labels) = set.materialize(train);
    let k = space.class_count();
    let cfg = ClassifierTrainConfig {
        weight_decay: method.weight_decay,
        seed: derive_seed(trial_seed, &[2]),
        ..method.classifier.clone()
    };
    let clf = train_classifier(&rows, &labels, k, &cfg)?.classifier;

    let (test_x, test_y) = test_rows(test, space);
    let nb = space.base.len() as u32;
    let top5 = 5.min(k);
    let novel_count = test_y.iter().filter(|&&y| y >= nb).count();
    let base_count = test_y.len() - novel_count;
    if novel_count == 0 || base_count == 0 {
        return Err(Error::invalid("test data must cover both base and novel classes"));
    }
    let acc = |k: usize, f: fn(u32, u32) -> bool| evaluate_topk(&clf, &test_x, &test_y, k, |y| f(y, nb));
    Ok(TrialResult {
        n,
        trial,
        seed: trial_seed,
        accuracy: Accuracies {
            novel_top1: acc(1, |y, nb| y >= nb)?,
            novel_top5: acc(top5, |y, nb| y >= nb)?,
            base_top1: acc(1, |y, nb| y < nb)?,
            base_top5: acc(top5, |y, nb| y < nb)?,
            all_top1: acc(1, |_, _| true)?,
            all_top5: acc(top5, |_, _| true)?,
        },
        novel_test_count: novel_count,
        base_test_count: base_count,
        generated: set.generated_count(),
    })
}

/// Cartesian product of the weight-decay grid with either the `k_min` grid
/// (hallucination, no fixed `k_min`), the fixed `k_min`, or nothing.
pub fn method_grid(config: &BenchmarkConfig, method: &MethodSpec) -> Vec<GridPoint> {
    let k_mins: Vec<Option<usize>> = match (method.hallucinate, method.k_min) {
        (false, _) => vec![None],
        (true, Some(k)) => vec![Some(k)],
        (true, None) => config.k_min_grid.iter().map(|&k| Some(k)).collect(),
    };
    config
        .weight_decay_grid
        .iter()
        .flat_map(|&weight_decay| k_mins.iter().map(move |&k_min| GridPoint { weight_decay, k_min }))
        .collect()
}

/// Scores each grid point by mean all-class top-5 over `trials` low-shot
/// trials on C¹ and returns the best, the lowest index winning ties. Only
/// examples of C¹ classes are read.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate<S: ExampleSource>(
    train: &S,
    test: &S,
    split: &ClassSplit,
    n: usize,
    grid: &[GridPoint],
    classifier: &ClassifierTrainConfig,
    hallucinator: Option<&Hallucinator>,
    trials: usize,
    seed: u64,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("cross-validation grid is empty"));
    }
    if trials == 0 {
        return Err(Error::invalid("cross-validation needs at least one trial"));
    }
    let space = split.cv_space();
    let scores = grid
        .par_iter()
        .map(|p| {
            let hallucination = match (p.k_min, hallucinator) {
                (Some(k), Some(h)) => Some((h, k)),
                (Some(_), None) => {
                    return Err(Error::invalid("grid point sets k_min but no hallucinator given"))
                }
                (None, _) => None,
            };
            let method = LowShotMethod {
                classifier,
                weight_decay: p.weight_decay,
                hallucination,
            };
            let mut total = 0.0;
            for t in 0..trials {
                let s = derive_seed(seed, &[n as u64, t as u64]);
                total += run_low_shot_phase(train, test, &space, n, t, s, &method)?.accuracy.all_top5;
            }
            Ok(total / trials as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen: grid[best],
        scores,
    })
}

/// A trained representation, the features it gives and, when some method
/// needs it, the hallucinator built on those features.
pub struct PreparedRepresentation {
    pub regularizer: RegularizerKind,
    pub lambda: f64,
    pub extractor: Mlp,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub hallucinator: Option<Hallucinator>,
}

/// Seed-stream tags under the master seed.
const CV_TAG: u64 = 0xC5;
const TRIAL_TAG: u64 = 0x7A;
const HALLUCINATOR_TAG: u64 = 0x4A;

/// Trains one representation per distinct `(regularizer, λ)` among the
/// methods on the base classes, extracts features and builds hallucinators.
pub fn prepare_representations(
    train_raw: &FeatureDataset,
    test_raw: &FeatureDataset,
    split: &ClassSplit,
    config: &BenchmarkConfig,
) -> Result<Vec<PreparedRepresentation>> {
    let mut keys: Vec<((RegularizerKind, u64), bool)> = Vec::new();
    for m in &config.methods {
        let key = m.representation_key();
        match keys.iter_mut().find(|(k, _)| *k == key) {
            Some((_, h)) => *h |= m.hallucinate,
            None => keys.push((key, m.hallucinate)),
        }
    }
    keys.into_par_iter()
        .map(|((regularizer, bits), needs_h)| {
            let lambda = f64::from_bits(bits);
            let cfg = ReprLossConfig {
                regularizer,
                lambda,
                ..config.representation.clone()
            };
            let trained = train_representation(train_raw, &split.base, &config.architecture, &cfg)?;
            let train = extract_features(&trained.extractor, train_raw)?;
            let test = extract_features(&trained.extractor, test_raw)?;
            let hallucinator = if needs_h {
                Some(build_hallucinator(
                    &train,
                    &split.base,
                    &trained.classifier,
                    &config.hallucinator,
                    hallucinator_seed(config.master_seed),
                )?)
            } else {
                None
            };
            Ok(PreparedRepresentation {
                regularizer,
                lambda,
                extractor: trained.extractor,
                train,
                test,
                hallucinator,
            })
        })
        .collect()
}

/// Seed of the hallucinator built on each representation.
pub fn hallucinator_seed(master: u64) -> u64 {
    derive_seed(master, &[HALLUCINATOR_TAG])
}

/// Trial seed shared by every method, so that all methods see the same
/// novel examples in trial `t` at `n` shots.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    derive_seed(master, &[TRIAL_TAG, n as u64, trial as u64])
}

/// Cross-validates and runs every method on prepared representations. On a
/// trial failure the completed part of the report is written to
/// `partial_path` (when given) before the error is returned.
pub fn run_prepared(
    prepared: &[PreparedRepresentation],
    split: &ClassSplit,
    config: &BenchmarkConfig,
    partial_path: Option<&Path>,
) -> Result<BenchmarkReport> {
    config.validate()?;
    let find = |m: &MethodSpec| {
        let key = m.representation_key();
        prepared
            .iter()
            .find(|p| (p.regularizer, p.lambda.to_bits()) == key)
            .ok_or_else(|| Error::invalid(format!("no representation prepared for method {}", m.name)))
    };
    let final_space = split.final_space();
    let mut report = BenchmarkReport {
        config: config.clone(),
        methods: config.methods.iter().map(|m| m.name.clone()).collect(),
        results: BTreeMap::new(),
    };
    let mut failure = None;
    'methods: for m in &config.methods {
        let rep = find(m)?;
        let h = if m.hallucinate {
            Some(rep.hallucinator.as_ref().ok_or_else(|| {
                Error::invalid(format!("method {} needs a hallucinator", m.name))
            })?)
        } else {
            None
        };
        let grid = method_grid(config, m);
        let mut per_shot = BTreeMap::new();
        for &n in &config.shots {
            let cv = cross_validate(
                &rep.train,
                &rep.test,
                split,
                n,
                &grid,
                &config.classifier,
                h,
                config.cv_trials,
                derive_seed(config.master_seed, &[CV_TAG]),
            );
            let chosen = match cv {
                Ok(cv) => cv.chosen,
                Err(e) => {
                    failure = Some(e);
                    break 'methods;
                }
            };
            let method = LowShotMethod {
                classifier: &config.classifier,
                weight_decay: chosen.weight_decay,
                hallucination: chosen.k_min.and_then(|k| h.map(|h| (h, k))),
            };
            let trials: Result<Vec<TrialResult>> = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    run_low_shot_phase(
                        &rep.train,
                        &rep.test,
                        &final_space,
                        n,
                        t,
                        trial_seed(config.master_seed, n, t),
                        &method,
                    )
                })
                .collect();
            match trials {
                Ok(trials) => {
                    let (mean, std) = summarize(&trials);
                    per_shot.insert(
                        n,
                        ShotResult {
                            chosen,
                            trials,
                            mean,
                            std,
                        },
                    );
                }
                Err(e) => {
                    failure = Some(e);
                    report.results.insert(m.name.clone(), per_shot);
                    break 'methods;
                }
            }
        }
        report.results.insert(m.name.clone(), per_shot);
    }
    if let Some(e) = failure {
        if let Some(path) = partial_path {
            report.save(path)?;
        }
        return Err(e);
    }
    Ok(report)
}

/// Both phases end to end on raw data.
pub fn run_benchmark(
    train_raw: &FeatureDataset,
    test_raw: &FeatureDataset,
    split: &ClassSplit,
    config: &BenchmarkConfig,
    partial_path: Option<&Path>,
) -> Result<BenchmarkReport> {
    config.validate()?;
    split.validate(train_raw.class_count())?;
    let prepared = prepare_representations(train_raw, test_raw, split, config)?;
    run_prepared(&prepared, split, config, partial_path)
}
