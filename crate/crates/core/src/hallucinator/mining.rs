use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use crate::dataset::{indices_by_class, ExampleSource};
use crate::error::{check_dim, Error, Result};
use crate::io::{read_json, write_json};
use crate::numerics::{derive_seed, dot, norm, ZERO_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCentroids {
    pub class: u32,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster sizes, parallel to `centroids`.
    pub counts: Vec<usize>,
}

/// Per-class cluster centers in feature space, ascending by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentroidSet {
    pub dim: usize,
    pub classes: Vec<ClassCentroids>,
}

impl CentroidSet {
    pub fn new(dim: usize, mut classes: Vec<ClassCentroids>) -> Result<Self> {
        classes.sort_by_key(|c| c.class);
        for w in classes.windows(2) {
            if w[0].class == w[1].class {
                return Err(Error::invalid(format!("class {} appears twice", w[0].class)));
            }
        }
        for c in &classes {
            check_dim(c.centroids.len(), c.counts.len())?;
            if c.centroids.is_empty() {
                return Err(Error::EmptyClass(c.class));
            }
            for v in &c.centroids {
                check_dim(dim, v.len())?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("non-finite centroid in class {}", c.class)));
                }
            }
        }
        Ok(Self { dim, classes })
    }

    pub fn get(&self, class: u32) -> Option<&ClassCentroids> {
        self.classes
            .binary_search_by_key(&class, |c| c.class)
            .ok()
            .map(|i| &self.classes[i])
    }

    pub fn max_per_class(&self) -> usize {
        self.classes.iter().map(|c| c.centroids.len()).max().unwrap_or(0)
    }

    /// Classes that can supply an ordered pair of distinct centroids.
    pub fn pair_classes(&self) -> Vec<&ClassCentroids> {
        self.classes.iter().filter(|c| c.centroids.len() >= 2).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: CentroidSet = read_json(path)?;
        Self::new(raw.dim, raw.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Upper bound on clusters per class; a class with `N` examples gets
    /// `min(max_clusters, ⌈N/2⌉)`.
    pub max_clusters: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            max_clusters: 10,
            max_iters: 100,
            restarts: 3,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_clusters == 0 || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::invalid(
                "max_clusters, max_iters and restarts must be positive",
            ));
        }
        Ok(())
    }

    pub fn clusters_for(&self, examples: usize) -> usize {
        self.max_clusters.min(examples.div_ceil(2)).max(1)
    }
}

/// Runs k-means on the examples of each class in `classes`, in parallel.
pub fn cluster_classes<S: ExampleSource + ?Sized>(
    data: &S,
    classes: &[u32],
    config: &ClusterConfig,
    seed: u64,
) -> Result<CentroidSet> {
    config.validate()?;
    let by_class = indices_by_class(data);
    let per_class = classes
        .par_iter()
        .map(|&class| {
            let idx = by_class
                .get(class as usize)
                .filter(|v| !v.is_empty())
                .ok_or(Error::EmptyClass(class))?;
            let points: Vec<Vec<f64>> = idx.iter().map(|&i| data.features(i).to_vec()).collect();
            let k = config.clusters_for(points.len());
            let r = kmeans(
                &points,
                k,
                derive_seed(seed, &[class as u64]),
                config.max_iters,
                config.restarts,
            )?;
            // drop clusters that ended empty (possible only when max_iters cuts Lloyd short)
            let (centroids, counts) = r
                .centroids
                .into_iter()
                .zip(r.counts)
                .filter(|(_, n)| *n > 0)
                .unzip();
            Ok(ClassCentroids {
                class,
                centroids,
                counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CentroidSet::new(data.dim(), per_class)
}

/// Which matches of a source pair enter the generator's training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    /// The single most similar pair over all other classes.
    BestOverall,
    /// The most similar pair in each other class.
    BestPerClass,
    /// Every pair in every other class with positive similarity.
    AllPositive,
}

/// `(c^a_{i1}, c^a_{i2}, c^b_{j1}, c^b_{j2})`, where `c^a_{i1} − c^a_{i2}` and
/// `c^b_{j1} − c^b_{j2}` point the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalogyQuadruplet {
    pub a: u32,
    pub i1: usize,
    pub i2: usize,
    pub b: u32,
    pub j1: usize,
    pub j2: usize,
    pub similarity: f64,
}

struct PairTable {
    class: u32,
    /// Ordered `(i1, i2)` with `i1 ≠ i2`, lexicographic.
    pairs: Vec<(usize, usize)>,
    /// Unit-length `c_{i1} − c_{i2}`, or all zeros for coincident centroids.
    units: Vec<Vec<f64>>,
}

fn pair_table(c: &ClassCentroids) -> PairTable {
    let k = c.centroids.len();
    let mut pairs = Vec::with_capacity(k * (k - 1));
    let mut units = Vec::with_capacity(k * (k - 1));
    for i1 in 0..k {
        for i2 in 0..k {
            if i1 == i2 {
                continue;
            }
            let diff: Vec<f64> = c.centroids[i1]
                .iter()
                .zip(&c.centroids[i2])
                .map(|(x, y)| x - y)
                .collect();
            let n = norm(&diff);
            let unit = if n < ZERO_NORM {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|v| v / n).collect()
            };
            pairs.push((i1, i2));
            units.push(unit);
        }
    }
    PairTable {
        class: c.class,
        pairs,
        units,
    }
}

/// Matches every ordered centroid pair of every class against the pairs of
/// all other classes by cosine similarity of the difference vectors. Ties go
/// to the lowest `(b, j1, j2)`. Output is ordered by `(a, i1, i2)` and then
/// by `(b, j1, j2)`.
pub fn mine_quadruplets(set: &CentroidSet, mode: MiningMode) -> Result<Vec<AnalogyQuadruplet>> {
    let tables: Vec<PairTable> = set.pair_classes().into_iter().map(pair_table).collect();
    if tables.len() < 2 {
        return Err(Error::invalid(
            "mining needs at least 2 classes with 2 or more centroids",
        ));
    }
    let per_class: Vec<Vec<AnalogyQuadruplet>> = tables
        .par_iter()
        .enumerate()
        .map(|(ai, ta)| {
            let mut out = Vec::new();
            for (&(i1, i2), u) in ta.pairs.iter().zip(&ta.units) {
                let mut best: Option<AnalogyQuadruplet> = None;
                for (bi, tb) in tables.iter().enumerate() {
                    if bi == ai {
                        continue;
                    }
                    let mut best_here: Option<AnalogyQuadruplet> = None;
                    for (&(j1, j2), v) in tb.pairs.iter().zip(&tb.units) {
                        let s = dot(u, v);
                        let q = || AnalogyQuadruplet {
                            a: ta.class,
                            i1,
                            i2,
                            b: tb.class,
                            j1,
                            j2,
                            similarity: s,
                        };
                        match mode {
                            MiningMode::AllPositive => {
                                if s > 0.0 {
                                    out.push(q());
                                }
                            }
                            _ => {
                                if best_here.as_ref().map_or(true, |b| s > b.similarity) {
                                    best_here = Some(q());
                                }
                            }
                        }
                    }
                    if let Some(q) = best_here {
                        match mode {
                            MiningMode::BestPerClass => {
                                if q.similarity > 0.0 {
                                    out.push(q);
                                }
                            }
                            _ => {
                                if best.as_ref().map_or(true, |b| q.similarity > b.similarity) {
                                    best = Some(q);
                                }
                            }
                        }
                    }
                }
                if let Some(q) = best.filter(|q| q.similarity > 0.0) {
                    out.push(q);
                }
            }
            out
        })
        .collect();
    Ok(per_class.into_iter().flatten().collect())
}

pub fn save_quadruplets(quads: &[AnalogyQuadruplet], path: &Path) -> Result<()> {
    write_json(path, &quads)
}

pub fn load_quadruplets(path: &Path) -> Result<Vec<AnalogyQuadruplet>> {
    read_json(path)
}
