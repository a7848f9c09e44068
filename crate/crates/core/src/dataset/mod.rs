//! Labeled feature datasets, class splits, low-shot sampling, the synthetic
//! world and the `LSF1` feature store.

mod batches;
mod sample;
mod split;
mod store;
mod synth;

pub use batches::{class_uniform_batches, ClassUniformBatches};
pub use sample::{sample_low_shot, LowShotTrainSet};
pub use split::{split_classes, ClassSplit, LabelSpace};
pub use store::{load_feature_store, save_feature_store, store_from_bytes, store_to_bytes};
pub use synth::{make_synthetic, SyntheticSpec, SyntheticWorld};

use crate::error::{check_dim, Error, Result};
use crate::numerics::DenseMatrix;

/// Read access to labeled examples.
///
/// Everything that consumes examples goes through this trait so that tests
/// can observe exactly which rows were read.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn class_count(&self) -> u32;
    fn label(&self, i: usize) -> u32;
    fn features(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `N` feature vectors of dimension `d` with labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: DenseMatrix,
    labels: Vec<u32>,
    class_count: u32,
}

impl FeatureDataset {
    pub fn new(features: DenseMatrix, labels: Vec<u32>, class_count: u32) -> Result<Self> {
        check_dim(features.rows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one example"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn feature_matrix(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Example indices grouped by class id.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        indices_by_class(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(
            DenseMatrix::new(indices.len(), d, data)?,
            labels,
            self.class_count,
        )
    }

    /// Applies `f` to every row, producing a dataset with the same labels.
    pub fn map_rows<F>(&self, out_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|i| f(self.features.row(i)))
            .collect();
        let mut data = Vec::with_capacity(rows.len() * out_dim);
        for r in &rows {
            check_dim(out_dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(
            DenseMatrix::new(rows.len(), out_dim, data)?,
            self.labels.clone(),
            self.class_count,
        )
    }
}

impl ExampleSource for FeatureDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.features.cols()
    }

    fn class_count(&self) -> u32 {
        self.class_count
    }

    fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    fn features(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

/// Example indices grouped by class id; reads labels only.
pub fn indices_by_class<S: ExampleSource + ?Sized>(data: &S) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); data.class_count() as usize];
    for i in 0..data.len() {
        out[data.label(i) as usize].push(i);
    }
    out
}
