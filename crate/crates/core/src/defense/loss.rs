use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{population_std, LossCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossDefense {
    Gaussian { seed: u64 },
    TensorBoard { weight: f64 },
    SlidingWindow { size: usize },
}

impl LossDefense {
    pub fn tag(&self) -> String {
        match self {
            Self::Gaussian { .. } => "L-gauss".into(),
            Self::TensorBoard { weight } => format!("L-tb({weight})"),
            Self::SlidingWindow { size } => format!("L-slide({size})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::TensorBoard { weight } if !(0.0..1.0).contains(&weight) => Err(
                Error::InvalidArgument(format!("TensorBoard weight {weight} not in [0, 1)")),
            ),
            Self::SlidingWindow { size: 0 } => {
                Err(Error::InvalidArgument("sliding window size must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn reseeded(&self, salt: u64) -> Self {
        match *self {
            Self::Gaussian { seed } => Self::Gaussian {
                seed: crate::seed::derive(seed, &[salt]),
            },
            ref other => other.clone(),
        }
    }

    pub fn apply(&self, curve: &LossCurve) -> Result<LossCurve> {
        self.validate()?;
        Ok(match *self {
            Self::Gaussian { seed } => smooth_gaussian(curve, seed),
            Self::TensorBoard { weight } => smooth_tensorboard(curve, weight),
            Self::SlidingWindow { size } => smooth_sliding(curve, size),
        })
    }
}

/// Adds Gaussian noise to every loss. The noise std is the mean of the train
/// curve's std and the test curve's std; results are clamped at zero.
pub fn smooth_gaussian(curve: &LossCurve, seed: u64) -> LossCurve {
    let train = curve.train_losses();
    let test = curve.test_losses();
    let std = 0.5 * (population_std(&train) + population_std(&test));
    if !(std > 0.0) {
        return curve.clone();
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&l| (l + normal.sample(&mut rng)).max(0.0))
            .collect()
    };
    let train = noisy(&train);
    let test = noisy(&test);
    curve.with_losses(&train, &test)
}

/// `L*_t = w·L_{t−1} + (1 − w)·L_t` using the raw previous value; `L*_0 = L_0`.
pub fn tensorboard_series(values: &[f64], w: f64) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(t, &l)| if t == 0 { l } else { l + w * (values[t - 1] - l) })
        .collect()
}

pub fn smooth_tensorboard(curve: &LossCurve, w: f64) -> LossCurve {
    curve.with_losses(
        &tensorboard_series(&curve.train_losses(), w),
        &tensorboard_series(&curve.test_losses(), w),
    )
}

/// Forward window mean over `L_t ..= L_{t+s}`, truncated at the series end.
pub fn sliding_series(values: &[f64], s: usize) -> Vec<f64> {
    (0..values.len())
        .map(|t| {
            let end = (t + s + 1).min(values.len());
            // anchored at L_t so a constant window averages to exactly L_t
            let anchor = values[t];
            anchor + values[t..end].iter().map(|v| v - anchor).sum::<f64>() / (end - t) as f64
        })
        .collect()
}

pub fn smooth_sliding(curve: &LossCurve, s: usize) -> LossCurve {
    curve.with_losses(
        &sliding_series(&curve.train_losses(), s),
        &sliding_series(&curve.test_losses(), s),
    )
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance between original and defended losses, computed for the
/// train and the test curve separately and averaged over the two.
pub fn l2_utility(original: &LossCurve, defended: &LossCurve) -> Result<f64> {
    if original.train.len() != defended.train.len() || original.test.len() != defended.test.len() {
        return Err(Error::shape(
            "l2_utility",
            format!("{}+{} points", original.train.len(), original.test.len()),
            format!("{}+{} points", defended.train.len(), defended.test.len()),
        ));
    }
    let train = euclidean(&original.train_losses(), &defended.train_losses());
    let test = euclidean(&original.test_losses(), &defended.test_losses());
    Ok(0.5 * (train + test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(train: &[f64], test: &[f64]) -> LossCurve {
        LossCurve {
            train: train.iter().enumerate().map(|(i, &l)| ((i + 1) as f64 * 0.2, l)).collect(),
            test: test.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
        }
    }

    #[test]
    fn tensorboard_example() {
        assert_eq!(tensorboard_series(&[1.0, 0.5], 0.2), vec![1.0, 0.6]);
        assert_eq!(tensorboard_series(&[1.0, 0.5, 0.7], 0.0), vec![1.0, 0.5, 0.7]);
    }

    #[test]
    fn sliding_example() {
        assert_eq!(sliding_series(&[1.0, 2.0, 3.0], 2), vec![2.0, 2.5, 3.0]);
        assert_eq!(sliding_series(&[1.0, 2.0, 3.0], 10), vec![2.0, 2.5, 3.0]);
    }

    #[test]
    fn constant_series_fixed() {
        let c = curve(&[0.7; 6], &[0.9; 3]);
        assert_eq!(smooth_tensorboard(&c, 0.4), c);
        assert_eq!(smooth_sliding(&c, 3), c);
        assert_eq!(smooth_gaussian(&c, 1), c);
    }

    #[test]
    fn l2_cases() {
        let a = curve(&[1.0, 2.0], &[1.0, 1.0]);
        assert_eq!(l2_utility(&a, &a).unwrap(), 0.0);
        let b = curve(&[1.0, 2.5], &[1.0, 1.0]);
        assert_eq!(l2_utility(&a, &b).unwrap(), 0.25);
        let short = curve(&[1.0], &[1.0, 1.0]);
        assert!(l2_utility(&a, &short).is_err());
    }
}
