use std::collections::BTreeMap;

use super::{indices_by_class, ExampleSource, LabelSpace};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Training data for one low-shot trial: every example of the base classes,
/// `n` real examples per novel class, and whatever the hallucinator added.
#[derive(Debug, Clone, PartialEq)]
pub struct LowShotTrainSet {
    pub space: LabelSpace,
    pub n: usize,
    pub trial_seed: u64,
    /// Indices into the source of all base-class examples.
    pub base: Vec<usize>,
    /// Novel class id → indices of its `n` drawn examples.
    pub novel: BTreeMap<u32, Vec<usize>>,
    /// Novel class id → hallucinated feature vectors.
    pub generated: BTreeMap<u32, Vec<Vec<f64>>>,
}

impl LowShotTrainSet {
    /// Number of training examples (real and generated) for `class`.
    pub fn count_for(&self, class: u32, source: &impl ExampleSource) -> usize {
        if let Some(idx) = self.novel.get(&class) {
            idx.len() + self.generated.get(&class).map_or(0, Vec::len)
        } else {
            self.base.iter().filter(|&&i| source.label(i) == class).count()
        }
    }

    pub fn generated_count(&self) -> usize {
        self.generated.values().map(Vec::len).sum()
    }

    /// Flattens into feature rows and joint labels (base ids first, then
    /// novel ids, each in ascending order).
    pub fn materialize(&self, source: &impl ExampleSource) -> (Vec<Vec<f64>>, Vec<u32>) {
        let joint = self.space.joint_index(source.class_count());
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let real = self.base.iter().chain(self.novel.values().flatten());
        for &i in real {
            rows.push(source.features(i).to_vec());
            labels.push(joint[source.label(i) as usize].expect("class in label space"));
        }
        for (&class, feats) in &self.generated {
            let j = joint[class as usize].expect("class in label space");
            for f in feats {
                rows.push(f.clone());
                labels.push(j);
            }
        }
        (rows, labels)
    }
}

/// Draws `n` examples without replacement from each novel class and keeps
/// every base-class example.
pub fn sample_low_shot(
    data: &impl ExampleSource,
    space: &LabelSpace,
    n: usize,
    seed: u64,
) -> Result<LowShotTrainSet> {
    if n == 0 {
        return Err(Error::invalid("shot count must be at least 1"));
    }
    let by_class = indices_by_class(data);
    let lookup = |c: u32| -> Result<&Vec<usize>> {
        by_class
            .get(c as usize)
            .ok_or_else(|| Error::invalid(format!("class {c} not in dataset")))
    };
    let mut base = Vec::new();
    for &c in &space.base {
        base.extend_from_slice(lookup(c)?);
    }
    base.sort_unstable();

    let mut rng = SeededRng::new(seed);
    let mut novel = BTreeMap::new();
    let mut novel_ids = space.novel.clone();
    novel_ids.sort_unstable();
    for c in novel_ids {
        let pool = lookup(c)?;
        if pool.len() < n {
            return Err(Error::InsufficientExamples {
                class: c,
                available: pool.len(),
                requested: n,
            });
        }
        let mut picked: Vec<usize> = rng
            .sample_indices(pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        novel.insert(c, picked);
    }
    Ok(LowShotTrainSet {
        space: space.clone(),
        n,
        trial_seed: seed,
        base,
        novel,
        generated: BTreeMap::new(),
    })
}
