//! Analogy-based example generation: cluster each base class, mine pairs of
//! centroid differences that agree across classes, train a generator to
//! apply a difference to a new example, then pad scarce novel classes with
//! its output.

mod generator;
mod kmeans;
mod mining;

pub use generator::{
    hallucinate, train_generator, GeneratorNet, GeneratorTrainConfig, TrainedGenerator,
    GENERATOR_MAGIC,
};
pub use kmeans::{kmeans, KMeansResult};
pub use mining::{
    cluster_classes, load_quadruplets, mine_quadruplets, save_quadruplets, AnalogyQuadruplet,
    CentroidSet, ClassCentroids, ClusterConfig, MiningMode,
};

use serde::{Deserialize, Serialize};

use crate::dataset::{ExampleSource, LowShotTrainSet};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HallucinatorConfig {
    pub clusters: ClusterConfig,
    pub mining: MiningMode,
    pub generator: GeneratorTrainConfig,
}

impl Default for HallucinatorConfig {
    fn default() -> Self {
        Self {
            clusters: ClusterConfig::default(),
            mining: MiningMode::BestOverall,
            generator: GeneratorTrainConfig::default(),
        }
    }
}

/// Everything the low-shot phase needs to hallucinate.
#[derive(Debug, Clone)]
pub struct Hallucinator {
    pub centroids: CentroidSet,
    pub quadruplets: Vec<AnalogyQuadruplet>,
    pub generator: TrainedGenerator,
}

/// Clusters `base_classes` of `data` (already in feature space), mines
/// analogies and trains the generator against the frozen base head.
pub fn build_hallucinator<S: ExampleSource + ?Sized>(
    data: &S,
    base_classes: &[u32],
    base_head: &crate::classifier::LinearClassifier,
    config: &HallucinatorConfig,
    seed: u64,
) -> Result<Hallucinator> {
    let centroids = cluster_classes(data, base_classes, &config.clusters, derive_seed(seed, &[1]))?;
    let quadruplets = mine_quadruplets(&centroids, config.mining)?;
    let generator = train_generator(
        &quadruplets,
        &centroids,
        base_head,
        base_classes,
        &config.generator,
        derive_seed(seed, &[2]),
    )?;
    Ok(Hallucinator {
        centroids,
        quadruplets,
        generator,
    })
}

/// Tops every novel class with fewer than `k_min` examples up to exactly
/// `k_min` by hallucination. Each new example uses a uniformly drawn real
/// example of the class as seed and a uniformly drawn base class and
/// ordered centroid pair as the analogy. Classes are processed in
/// ascending order, each from its own stream of `seed`.
pub fn augment_low_shot<S: ExampleSource + ?Sized>(
    trainset: &LowShotTrainSet,
    source: &S,
    generator: &GeneratorNet,
    centroids: &CentroidSet,
    k_min: usize,
    seed: u64,
) -> Result<LowShotTrainSet> {
    if k_min == 0 {
        return Err(Error::invalid("k_min must be >= 1"));
    }
    if centroids.dim != source.dim() || generator.feat_dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            actual: if centroids.dim != source.dim() { centroids.dim } else { generator.feat_dim() },
        });
    }
    let pool = centroids.pair_classes();
    let mut out = trainset.clone();
    for (&class, real) in &trainset.novel {
        let have = real.len() + trainset.generated.get(&class).map_or(0, Vec::len);
        if have >= k_min {
            continue;
        }
        if pool.is_empty() {
            return Err(Error::invalid("no base class has two centroids to hallucinate from"));
        }
        if real.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        let mut rng = SeededRng::new(derive_seed(seed, &[class as u64]));
        let made = out.generated.entry(class).or_default();
        for _ in have..k_min {
            let x = source.features(real[rng.below(real.len())]);
            let base = pool[rng.below(pool.len())];
            let k = base.centroids.len();
            let i1 = rng.below(k);
            let mut i2 = rng.below(k - 1);
            if i2 >= i1 {
                i2 += 1;
            }
            made.push(hallucinate(generator, x, &base.centroids[i1], &base.centroids[i2])?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train_classifier, ClassifierTrainConfig, LinearClassifier};
    use crate::dataset::{make_synthetic, sample_low_shot, FeatureDataset, LabelSpace, SyntheticSpec, SyntheticWorld};
    use crate::mlp::Mlp;
    use crate::numerics::{norm_sq, squared_distance};

    fn clean_world() -> SyntheticWorld {
        let spec = SyntheticSpec {
            raw_dim: 12,
            base_classes: 40,
            novel_classes: 4,
            mode_count: 4,
            // small mode offsets keep most coordinates on one side of the rectifier
            mode_scale: 0.4,
            noise_sigma: 0.0,
            train_per_class: 40,
            test_per_class: 10,
            ..Default::default()
        };
        make_synthetic(&spec, 11).unwrap()
    }

    fn base_head(world: &SyntheticWorld) -> LinearClassifier {
        let base = &world.split.base;
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..world.train.len() {
            if let Some(j) = base.iter().position(|&c| c == world.train.label(i)) {
                rows.push(world.train.features(i).to_vec());
                ys.push(j as u32);
            }
        }
        let cfg = ClassifierTrainConfig { iterations: 2000, batch_size: 64, weight_decay: 1e-3, ..Default::default() };
        train_classifier(&rows, &ys, base.len(), &cfg).unwrap().classifier
    }

    fn clusters() -> ClusterConfig {
        ClusterConfig { max_clusters: 4, max_iters: 100, restarts: 10 }
    }

    fn quick_generator() -> GeneratorTrainConfig {
        GeneratorTrainConfig { lambda: 100.0, learning_rate: 0.01, epochs: 300, ..Default::default() }
    }

    #[test]
    fn clean_world_centroids_are_the_modes() {
        let w = clean_world();
        let set = cluster_classes(&w.train, &w.split.base, &clusters(), 0).unwrap();
        for c in &set.classes {
            for centroid in &c.centroids {
                let best = (0..4)
                    .map(|m| {
                        let p: Vec<f64> = w.clean_point(c.class, m).iter().map(|v| v.max(0.0)).collect();
                        squared_distance(&p, centroid)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 1e-18, "class {}: {best}", c.class);
            }
        }
    }

    #[test]
    fn generator_learns_the_analogy_map() {
        let w = clean_world();
        let head = base_head(&w);
        let base = &w.split.base;
        let set = cluster_classes(&w.train, base, &clusters(), 0).unwrap();
        let quads = mine_quadruplets(&set, MiningMode::BestOverall).unwrap();
        let (test_q, train_q): (Vec<_>, Vec<_>) =
            quads.into_iter().enumerate().partition(|(i, _)| i % 5 == 0);
        let test_q: Vec<_> = test_q.into_iter().map(|(_, q)| q).collect();
        let train_q: Vec<_> = train_q.into_iter().map(|(_, q)| q).collect();
        let t = train_generator(&train_q, &set, &head, base, &quick_generator(), 3).unwrap();
        assert!(t.loss_trace.iter().all(|l| l.is_finite()));
        let g = &t.generator;
        let (mut err, mut norms) = (0.0, 0.0);
        for q in &test_q {
            let c = |class: u32, i: usize| set.get(class).unwrap().centroids[i].clone();
            let out = hallucinate(g, &c(q.a, q.i1), &c(q.b, q.j1), &c(q.b, q.j2)).unwrap();
            err += squared_distance(&out, &c(q.a, q.i2));
            norms += norm_sq(&c(q.a, q.i2));
        }
        assert!(err < 0.1 * norms, "held-out mse ratio {}", err / norms);

    }

    #[test]
    fn generator_training_is_deterministic_and_checks_input() {
        let w = clean_world();
        let head = base_head(&w);
        let set = cluster_classes(&w.train, &w.split.base, &clusters(), 0).unwrap();
        let quads = mine_quadruplets(&set, MiningMode::BestOverall).unwrap();
        let cfg = GeneratorTrainConfig { epochs: 3, hidden: 16, ..Default::default() };
        let a = train_generator(&quads, &set, &head, &w.split.base, &cfg, 9).unwrap();
        let b = train_generator(&quads, &set, &head, &w.split.base, &cfg, 9).unwrap();
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(train_generator(&[], &set, &head, &w.split.base, &cfg, 9).is_err());
        assert!(train_generator(&quads, &set, &head, &w.split.base[1..], &cfg, 9).is_err());
    }

    #[test]
    fn huge_lambda_is_mse_dominated() {
        let w = clean_world();
        let head = base_head(&w);
        let set = cluster_classes(&w.train, &w.split.base, &clusters(), 0).unwrap();
        let quads = mine_quadruplets(&set, MiningMode::BestOverall).unwrap();
        let cfg = GeneratorTrainConfig { epochs: 2, hidden: 16, lambda: 1e6, learning_rate: 1e-8, ..Default::default() };
        let t = train_generator(&quads, &set, &head, &w.split.base, &cfg, 1).unwrap();
        let last = *t.loss_trace.last().unwrap();
        assert!((last - 1e6 * t.final_mse).abs() <= 1e-3 * last);
    }

    #[test]
    fn generator_output_shape_and_zero_net() {
        let g = GeneratorNet::from_mlp(Mlp::zeros(&[6, 5, 5, 2]).unwrap()).unwrap();
        assert_eq!(hallucinate(&g, &[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap(), vec![0.0, 0.0]);
        assert!(hallucinate(&g, &[1.0], &[3.0, 4.0], &[5.0, 6.0]).is_err());
        assert!(GeneratorNet::from_mlp(Mlp::zeros(&[6, 5, 2]).unwrap()).is_err());
        assert!(GeneratorNet::from_mlp(Mlp::zeros(&[5, 5, 5, 2]).unwrap()).is_err());
        let mut rng = SeededRng::new(0);
        let g = GeneratorNet::new(3, 7, &mut rng).unwrap();
        let back = GeneratorNet::from_bytes(&g.to_bytes().unwrap()).unwrap();
        assert_eq!(back.to_bytes().unwrap(), g.to_bytes().unwrap());
    }

    fn toy_trainset(n: usize) -> (FeatureDataset, LowShotTrainSet, GeneratorNet, CentroidSet) {
        let w = clean_world();
        let space = LabelSpace { base: w.split.base.clone(), novel: w.split.novel.clone() };
        let ts = sample_low_shot(&w.train, &space, n, 4).unwrap();
        let set = cluster_classes(&w.train, &w.split.base, &clusters(), 0).unwrap();
        let mut rng = SeededRng::new(5);
        let g = GeneratorNet::new(12, 8, &mut rng).unwrap();
        (w.train, ts, g, set)
    }

    #[test]
    fn augmentation_tops_up_to_k_min() {
        for (n, k_min) in [(1, 20), (2, 5), (5, 5), (10, 3)] {
            let (train, ts, g, set) = toy_trainset(n);
            let out = augment_low_shot(&ts, &train, &g, &set, k_min, 7).unwrap();
            assert_eq!(out.base, ts.base);
            assert_eq!(out.novel, ts.novel);
            for (class, real) in &out.novel {
                let made = out.generated.get(class).map_or(0, Vec::len);
                assert_eq!(real.len() + made, n.max(k_min), "n {n} k_min {k_min}");
            }
            let expected: usize = out.novel.len() * k_min.saturating_sub(n);
            assert_eq!(out.generated_count(), expected);
            if n >= k_min {
                assert_eq!(out, ts);
            }
            assert!(out.generated.values().flatten().flatten().all(|&v| v >= 0.0));
            assert_eq!(out, augment_low_shot(&ts, &train, &g, &set, k_min, 7).unwrap());
        }
    }

    #[test]
    fn augmentation_rejects_bad_input() {
        let (train, ts, g, set) = toy_trainset(1);
        assert!(augment_low_shot(&ts, &train, &g, &set, 0, 7).is_err());
        let lonely = CentroidSet::new(12, vec![set.classes[0].clone()]).unwrap();
        let single = CentroidSet::new(
            12,
            vec![ClassCentroids { class: 0, centroids: vec![vec![0.0; 12]], counts: vec![1] }],
        )
        .unwrap();
        assert!(augment_low_shot(&ts, &train, &g, &single, 3, 7).is_err());
        assert!(augment_low_shot(&ts, &train, &g, &lonely, 3, 7).is_ok());
        let mut rng = SeededRng::new(5);
        let wrong = GeneratorNet::new(4, 8, &mut rng).unwrap();
        assert!(augment_low_shot(&ts, &train, &wrong, &set, 3, 7).is_err());
    }
}
