use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Endless stream of minibatches drawn class-uniformly: each slot picks a
/// class uniformly, then an example uniformly within it.
#[derive(Debug, Clone)]
pub struct ClassUniformBatches {
    by_class: Vec<Vec<usize>>,
    batch: usize,
    rng: SeededRng,
}

impl ClassUniformBatches {
    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch)
            .map(|_| {
                let members = &self.by_class[self.rng.below(self.by_class.len())];
                members[self.rng.below(members.len())]
            })
            .collect()
    }
}

impl Iterator for ClassUniformBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// `labels[i]` must be in `[0, class_count)` and every class needs an example.
pub fn class_uniform_batches(
    labels: &[u32],
    class_count: u32,
    batch: usize,
    rng: SeededRng,
) -> Result<ClassUniformBatches> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if class_count == 0 {
        return Err(Error::invalid("no classes to sample from"));
    }
    let mut by_class = vec![Vec::new(); class_count as usize];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l as usize)
            .ok_or_else(|| Error::invalid(format!("label {l} >= {class_count}")))?
            .push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c as u32));
    }
    Ok(ClassUniformBatches {
        by_class,
        batch,
        rng,
    })
}
