//! Exact t-SNE: perplexity-calibrated Gaussian input affinities, Student-t
//! output affinities, KL-divergence descent, and the leave-one-out kNN
//! utility score used to judge how much class structure a plot keeps.

mod affinity;
mod fit;
mod knn;

pub use affinity::{
    conditional_affinities, conditional_affinities_lenient, kl_divergence, kl_gradient,
    low_dim_affinities, row_perplexity, squared_distances, symmetrize, AffinityMatrix,
    Conditionals, PERPLEXITY_TOLERANCE, SIGMA_MAX, SIGMA_MIN, SIGMA_SEARCH_STEPS,
};
pub use fit::{descend, fit, fit_traced, input_affinities, TsneConfig};
pub use knn::knn_utility;

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// High-dimensional points with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    points: Matrix,
    labels: Vec<usize>,
}

impl EmbeddingSet {
    pub fn new(points: Matrix, labels: Vec<usize>) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::shape("EmbeddingSet", points.rows(), labels.len()));
        }
        if points.rows() < 4 {
            return Err(Error::InvalidArgument(format!(
                "embedding set needs at least 4 points, got {}",
                points.rows()
            )));
        }
        if !points.is_finite() {
            return Err(Error::NonFinite {
                what: "embeddings",
                step: 0,
            });
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of exactly-zero values.
    pub fn sparsity(&self) -> f64 {
        let v = self.points.as_slice();
        v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len().max(1) as f64
    }

    pub fn with_points(&self, points: Matrix) -> Result<Self> {
        Self::new(points, self.labels.clone())
    }
}

/// 2-D t-SNE output with the labels carried over from the input.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneLayout {
    coords: Matrix,
    labels: Vec<usize>,
}

impl TsneLayout {
    pub fn new(coords: Matrix, labels: Vec<usize>) -> Result<Self> {
        if coords.cols() != 2 || coords.rows() != labels.len() {
            return Err(Error::shape(
                "TsneLayout",
                format!("{}x2", labels.len()),
                format!("{}x{}", coords.rows(), coords.cols()),
            ));
        }
        if !coords.is_finite() {
            return Err(Error::NonFinite {
                what: "layout",
                step: 0,
            });
        }
        Ok(Self { coords, labels })
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_coords(&self, coords: Matrix) -> Result<Self> {
        Self::new(coords, self.labels.clone())
    }

    /// CSV rows `index,x,y,label` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x,y,label\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{:?},{:?},{}\n",
                self.coords.get(i, 0),
                self.coords.get(i, 1),
                self.labels[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = (f.len() == 4)
                .then(|| Some((f[1].parse().ok()?, f[2].parse().ok()?, f[3].parse().ok()?)))
                .flatten();
            let (x, y, l): (f64, f64, usize) = parsed
                .ok_or_else(|| Error::InvalidArgument(format!("bad layout row {line:?}")))?;
            rows.push(vec![x, y]);
            labels.push(l);
        }
        Self::new(Matrix::from_rows(&rows)?, labels)
    }
}
