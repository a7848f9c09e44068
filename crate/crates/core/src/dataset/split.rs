use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::numerics::SeededRng;

/// Base/novel partition of the class ids, plus the two halves of each side
/// used to keep hyperparameter search away from the final evaluation classes.
///
/// All lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub base: Vec<u32>,
    pub novel: Vec<u32>,
    pub cv_base_1: Vec<u32>,
    pub cv_base_2: Vec<u32>,
    pub cv_novel_1: Vec<u32>,
    pub cv_novel_2: Vec<u32>,
}

/// The classes a low-shot problem is posed over. Joint labels are the base
/// ids in order followed by the novel ids in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub base: Vec<u32>,
    pub novel: Vec<u32>,
}

impl LabelSpace {
    pub fn class_count(&self) -> usize {
        self.base.len() + self.novel.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.base.iter().chain(&self.novel).copied()
    }

    /// Lookup table from original class id to joint label.
    pub fn joint_index(&self, universe: u32) -> Vec<Option<u32>> {
        let mut map = vec![None; universe as usize];
        for (j, c) in self.classes().enumerate() {
            map[c as usize] = Some(j as u32);
        }
        map
    }

    pub fn contains(&self, class: u32) -> bool {
        self.base.contains(&class) || self.novel.contains(&class)
    }
}

impl ClassSplit {
    pub fn class_count(&self) -> usize {
        self.base.len() + self.novel.len()
    }

    pub fn full_space(&self) -> LabelSpace {
        LabelSpace {
            base: self.base.clone(),
            novel: self.novel.clone(),
        }
    }

    /// C¹: the classes hyperparameters are chosen on.
    pub fn cv_space(&self) -> LabelSpace {
        LabelSpace {
            base: self.cv_base_1.clone(),
            novel: self.cv_novel_1.clone(),
        }
    }

    /// C²: the classes final numbers are reported on.
    pub fn final_space(&self) -> LabelSpace {
        LabelSpace {
            base: self.cv_base_2.clone(),
            novel: self.cv_novel_2.clone(),
        }
    }

    pub fn validate(&self, class_count: u32) -> Result<()> {
        let mut seen = vec![0u8; class_count as usize];
        for &c in self.base.iter().chain(&self.novel) {
            let slot = seen
                .get_mut(c as usize)
                .ok_or_else(|| Error::invalid(format!("class {c} >= {class_count}")))?;
            *slot += 1;
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::invalid(
                "base and novel must partition the class ids",
            ));
        }
        let halves_ok = |whole: &[u32], a: &[u32], b: &[u32]| {
            let mut joined: Vec<u32> = a.iter().chain(b).copied().collect();
            joined.sort_unstable();
            joined == whole
        };
        if !halves_ok(&self.base, &self.cv_base_1, &self.cv_base_2)
            || !halves_ok(&self.novel, &self.cv_novel_1, &self.cv_novel_2)
        {
            return Err(Error::invalid("cv halves must partition their side"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let split: Self = read_json(path)?;
        let n = split.class_count() as u32;
        split.validate(n)?;
        Ok(split)
    }
}

fn halve(mut ids: Vec<u32>, rng: &mut SeededRng) -> (Vec<u32>, Vec<u32>) {
    rng.shuffle(&mut ids);
    let mut second = ids.split_off(ids.len() / 2);
    let mut first = ids;
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Uniformly random base/novel split with `round(class_count * base_fraction)`
/// base classes; each side is then halved the same way.
pub fn split_classes(class_count: u32, base_fraction: f64, seed: u64) -> Result<ClassSplit> {
    if class_count < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 classes to split, got {class_count}"
        )));
    }
    if !(base_fraction > 0.0 && base_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "base fraction must be in (0, 1), got {base_fraction}"
        )));
    }
    let n_base = (class_count as f64 * base_fraction).round() as usize;
    let n = class_count as usize;
    if n_base < 2 || n - n_base < 2 {
        return Err(Error::invalid(format!(
            "base fraction {base_fraction} leaves {n_base} base and {} novel classes; each side needs 2",
            n - n_base
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut ids: Vec<u32> = (0..class_count).collect();
    rng.shuffle(&mut ids);
    let mut novel = ids.split_off(n_base);
    let mut base = ids;
    base.sort_unstable();
    novel.sort_unstable();
    let (cv_base_1, cv_base_2) = halve(base.clone(), &mut rng);
    let (cv_novel_1, cv_novel_2) = halve(novel.clone(), &mut rng);
    Ok(ClassSplit {
        base,
        novel,
        cv_base_1,
        cv_base_2,
        cv_novel_1,
        cv_novel_2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn imagenet_sized_split() {
        let s = split_classes(1000, 0.389, 0).unwrap();
        assert_eq!(s.base.len(), 389);
        assert_eq!(s.novel.len(), 611);
        s.validate(1000).unwrap();
    }

    #[test]
    fn tiny_split() {
        let s = split_classes(4, 0.5, 9).unwrap();
        assert_eq!((s.base.len(), s.novel.len()), (2, 2));
        assert_eq!(s.cv_base_1.len(), 1);
        s.validate(4).unwrap();
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(split_classes(60, 0.5, 3).unwrap(), split_classes(60, 0.5, 3).unwrap());
        assert_ne!(split_classes(60, 0.5, 3).unwrap(), split_classes(60, 0.5, 4).unwrap());
    }

    #[test]
    fn degenerate_fractions_rejected() {
        assert!(split_classes(4, 0.1, 0).is_err());
        assert!(split_classes(4, 0.9, 0).is_err());
        assert!(split_classes(10, 0.0, 0).is_err());
        assert!(split_classes(10, 1.0, 0).is_err());
        assert!(split_classes(3, 0.5, 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let s = split_classes(20, 0.6, 1).unwrap();
        s.save(&path).unwrap();
        assert_eq!(ClassSplit::load(&path).unwrap(), s);
    }

    #[test]
    fn joint_index_orders_base_first() {
        let space = LabelSpace {
            base: vec![3, 5],
            novel: vec![0],
        };
        let map = space.joint_index(6);
        assert_eq!(map[3], Some(0));
        assert_eq!(map[5], Some(1));
        assert_eq!(map[0], Some(2));
        assert_eq!(map[1], None);
    }

    proptest! {
        #[test]
        fn split_partitions(seed in any::<u64>(), n in 4u32..200, frac in 0.2f64..0.8) {
            if let Ok(s) = split_classes(n, frac, seed) {
                prop_assert!(s.validate(n).is_ok());
                prop_assert!(!s.cv_base_1.is_empty() && !s.cv_novel_2.is_empty());
            }
        }
    }
}
