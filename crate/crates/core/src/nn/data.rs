use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Samples with class labels. `indices` are positions in the dataset the
/// samples were drawn from, so splits can be checked for disjointness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let indices = (0..labels.len()).collect();
        Self::with_indices(features, labels, indices, class_count)
    }

    pub fn with_indices(
        features: Matrix,
        labels: Vec<usize>,
        indices: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() || indices.len() != labels.len() {
            return Err(Error::shape(
                "LabeledSet",
                format!("{} labels and indices", features.rows()),
                format!("{} labels, {} indices", labels.len(), indices.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            indices,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Subset by row positions (not by original indices).
    pub fn subset(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            indices: rows.iter().map(|&r| self.indices[r]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-dimension (min, max) of the features.
    pub fn feature_range(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dims()];
        for r in 0..self.features.rows() {
            for (o, &v) in out.iter_mut().zip(self.features.row(r)) {
                o.0 = o.0.min(v);
                o.1 = o.1.max(v);
            }
        }
        out
    }
}
