use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{population_std, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingUnit {
    Integer,
    EvenInteger,
}

/// Perturbation applied either to the embeddings before t-SNE (`E-*`) or to
/// the finished 2-D coordinates (`C-*`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TsneDefense {
    /// Round embedding values to `decimals` places.
    EmbeddingRound { decimals: u32 },
    /// Keep only the largest-magnitude fraction of each embedding row.
    EmbeddingThreshold { keep_fraction: f64 },
    /// Gaussian noise scaled by the embeddings' standard deviation.
    EmbeddingNoise { std_fraction: f64, seed: u64 },
    /// Round 2-D coordinates to the given unit grid.
    CoordinateRound { unit: RoundingUnit },
    /// Gaussian noise scaled by the coordinates' standard deviation.
    CoordinateNoise { std_fraction: f64, seed: u64 },
}

impl TsneDefense {
    pub fn acts_on_embeddings(&self) -> bool {
        matches!(
            self,
            Self::EmbeddingRound { .. } | Self::EmbeddingThreshold { .. } | Self::EmbeddingNoise { .. }
        )
    }

    /// Short stable tag, e.g. `E-T(0.6)`.
    pub fn tag(&self) -> String {
        match self {
            Self::EmbeddingRound { decimals } => format!("E-R({decimals})"),
            Self::EmbeddingThreshold { keep_fraction } => format!("E-T({keep_fraction})"),
            Self::EmbeddingNoise { std_fraction, .. } => format!("E-N({std_fraction})"),
            Self::CoordinateRound { unit: RoundingUnit::Integer } => "C-R(int)".into(),
            Self::CoordinateRound { unit: RoundingUnit::EvenInteger } => "C-R(even)".into(),
            Self::CoordinateNoise { std_fraction, .. } => format!("C-N({std_fraction})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::EmbeddingThreshold { keep_fraction } if !(keep_fraction > 0.0 && keep_fraction <= 1.0) => {
                Err(Error::InvalidArgument(format!("keep_fraction {keep_fraction} not in (0, 1]")))
            }
            Self::EmbeddingNoise { std_fraction, .. } | Self::CoordinateNoise { std_fraction, .. }
                if !(std_fraction >= 0.0 && std_fraction.is_finite()) =>
            {
                Err(Error::InvalidArgument(format!("std_fraction {std_fraction} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Same defense with its noise stream re-keyed, so every plot gets
    /// independent noise while staying reproducible.
    pub fn reseeded(&self, salt: u64) -> Self {
        let mix = |seed: u64| crate::seed::derive(seed, &[salt]);
        match *self {
            Self::EmbeddingNoise { std_fraction, seed } => Self::EmbeddingNoise {
                std_fraction,
                seed: mix(seed),
            },
            Self::CoordinateNoise { std_fraction, seed } => Self::CoordinateNoise {
                std_fraction,
                seed: mix(seed),
            },
            ref other => other.clone(),
        }
    }

    /// Applies an embedding-stage defense; coordinate defenses pass through.
    pub fn apply_to_embeddings(&self, points: &Matrix) -> Result<Matrix> {
        self.validate()?;
        Ok(match *self {
            Self::EmbeddingRound { decimals } => round_embeddings(points, decimals),
            Self::EmbeddingThreshold { keep_fraction } => threshold_embeddings(points, keep_fraction),
            Self::EmbeddingNoise { std_fraction, seed } => noise_embeddings(points, std_fraction, seed),
            _ => points.clone(),
        })
    }

    /// Applies a coordinate-stage defense; embedding defenses pass through.
    pub fn apply_to_coordinates(&self, coords: &Matrix) -> Result<Matrix> {
        self.validate()?;
        Ok(match *self {
            Self::CoordinateRound { unit } => round_coordinates(coords, unit),
            Self::CoordinateNoise { std_fraction, seed } => noise_coordinates(coords, std_fraction, seed),
            _ => coords.clone(),
        })
    }
}

/// Half-away-from-zero rounding to `decimals` places.
pub fn round_embeddings(points: &Matrix, decimals: u32) -> Matrix {
    let scale = 10f64.powi(decimals as i32);
    let mut out = points.clone();
    out.map_inplace(|v| (v * scale).round() / scale);
    out
}

/// Keeps the `⌈keep · d⌉` largest-magnitude entries of every row (lower
/// index first among equal magnitudes) and zeroes the rest.
pub fn threshold_embeddings(points: &Matrix, keep_fraction: f64) -> Matrix {
    let d = points.cols();
    let keep = ((keep_fraction * d as f64).ceil() as usize).min(d);
    let mut out = points.clone();
    let mut order: Vec<usize> = Vec::with_capacity(d);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        order.clear();
        order.extend(0..d);
        order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
        for &c in &order[keep..] {
            row[c] = 0.0;
        }
    }
    out
}

fn add_scaled_noise(values: &Matrix, std_fraction: f64, seed: u64) -> Matrix {
    let std = std_fraction * population_std(values.as_slice());
    if !(std > 0.0) {
        return values.clone();
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = values.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    out
}

/// I.i.d. Gaussian noise with std `std_fraction ×` the std of all values.
pub fn noise_embeddings(points: &Matrix, std_fraction: f64, seed: u64) -> Matrix {
    add_scaled_noise(points, std_fraction, seed)
}

pub fn round_coordinates(coords: &Matrix, unit: RoundingUnit) -> Matrix {
    let mut out = coords.clone();
    match unit {
        RoundingUnit::Integer => out.map_inplace(f64::round),
        // nearest even integer; an odd integer sits halfway and goes outward
        RoundingUnit::EvenInteger => out.map_inplace(|v| 2.0 * (v / 2.0).round()),
    }
    out
}

/// Noise on both coordinates, std `std_fraction ×` the std of all `2n` values.
pub fn noise_coordinates(coords: &Matrix, std_fraction: f64, seed: u64) -> Matrix {
    add_scaled_noise(coords, std_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn round_embeddings_examples() {
        let x = m(&[&[0.123, -0.15, 2.5]]);
        assert_eq!(round_embeddings(&x, 1).as_slice(), &[0.1, -0.2, 2.5]);
        assert_eq!(round_embeddings(&x, 0).as_slice(), &[0.0, -0.0, 3.0]);
        let once = round_embeddings(&x, 2);
        assert_eq!(round_embeddings(&once, 2), once);
    }

    #[test]
    fn threshold_keeps_largest() {
        let x = m(&[&[5.0, 0.0, 3.0, 1.0, 2.0]]);
        assert_eq!(threshold_embeddings(&x, 0.6).as_slice(), &[5.0, 0.0, 3.0, 0.0, 2.0]);
        assert_eq!(threshold_embeddings(&x, 1.0), x);
        // ties: lower index kept first
        let t = m(&[&[1.0, -1.0, 1.0]]);
        assert_eq!(threshold_embeddings(&t, 0.5).as_slice(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn coordinate_rounding_units() {
        let x = m(&[&[3.7, 2.9], &[-3.0, 1.0]]);
        assert_eq!(round_coordinates(&x, RoundingUnit::Integer).as_slice(), &[4.0, 3.0, -3.0, 1.0]);
        assert_eq!(
            round_coordinates(&x, RoundingUnit::EvenInteger).as_slice(),
            &[4.0, 2.0, -4.0, 2.0]
        );
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = m(&[&[0.3, -1.2], &[4.0, 0.01]]);
        assert_eq!(noise_embeddings(&x, 0.0, 3), x);
        assert_eq!(noise_coordinates(&x, 0.0, 3), x);
        assert_eq!(threshold_embeddings(&x, 1.0), x);
    }

    #[test]
    fn noise_is_seeded() {
        let x = m(&[&[0.3, -1.2], &[4.0, 0.01]]);
        assert_eq!(noise_embeddings(&x, 0.5, 9), noise_embeddings(&x, 0.5, 9));
        assert_ne!(noise_embeddings(&x, 0.5, 9), noise_embeddings(&x, 0.5, 10));
    }
}
