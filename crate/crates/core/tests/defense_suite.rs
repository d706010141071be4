mod common;

use common::*;
use plotleak::defense::{
    l2_utility, noise_coordinates, noise_embeddings, round_coordinates, round_embeddings, sliding_series,
    smooth_gaussian, tensorboard_series, threshold_embeddings, LossDefense, RoundingUnit, TsneDefense,
};
use plotleak::nn::{population_std, LossCurve, Matrix};
use plotleak::tsne::{fit, knn_utility, EmbeddingSet, TsneConfig};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn curve(train: &[f64], test: &[f64]) -> LossCurve {
    LossCurve {
        train: train.iter().enumerate().map(|(i, &l)| ((i + 1) as f64 * 0.2, l)).collect(),
        test: test.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
    }
}

fn row(values: &[f64]) -> Matrix {
    Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
}

#[test]
fn rounding_examples() {
    assert_eq!(round_embeddings(&row(&[0.123]), 1).as_slice(), &[0.1]);
    assert_eq!(round_coordinates(&row(&[3.7]), RoundingUnit::Integer).as_slice(), &[4.0]);
    assert_eq!(round_coordinates(&row(&[3.7]), RoundingUnit::EvenInteger).as_slice(), &[4.0]);
    assert_eq!(round_coordinates(&row(&[2.9]), RoundingUnit::EvenInteger).as_slice(), &[2.0]);
}

#[test]
fn threshold_example() {
    let t = threshold_embeddings(&row(&[5.0, 0.0, 3.0, 1.0, 2.0]), 0.6);
    assert_eq!(t.as_slice(), &[5.0, 0.0, 3.0, 0.0, 2.0]);
}

#[test]
fn smoothing_examples() {
    assert_eq!(tensorboard_series(&[1.0, 0.5], 0.2), vec![1.0, 0.6]);
    assert_eq!(sliding_series(&[1.0, 2.0, 3.0], 2), vec![2.0, 2.5, 3.0]);
    // window longer than the series: each output is the mean of the suffix
    let v = [4.0, 1.0, 2.5, 0.5];
    let s = sliding_series(&v, 10);
    for t in 0..v.len() {
        let mean = v[t..].iter().sum::<f64>() / (v.len() - t) as f64;
        assert!((s[t] - mean).abs() < 1e-12);
    }
}

#[test]
fn l2_hand_cases() {
    let a = curve(&[1.0, 0.8, 0.6], &[0.9, 0.7, 0.5]);
    assert_eq!(l2_utility(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    b.test[1].1 += 0.3;
    assert!((l2_utility(&a, &b).unwrap() - 0.15).abs() < 1e-12);
    // train diffs (0.3, 0.4, 0) → 0.5; test diffs (0, 0, 1.2) → 1.2
    let c = curve(&[1.3, 1.2, 0.6], &[0.9, 0.7, 1.7]);
    assert!((l2_utility(&a, &c).unwrap() - 0.85).abs() < 1e-12);
    assert!(l2_utility(&a, &curve(&[1.0, 0.8], &[0.9, 0.7, 0.5])).is_err());
}

#[test]
fn constant_curve_survives_gaussian_noise() {
    let c = curve(&[0.4; 10], &[0.6; 2]);
    assert_eq!(smooth_gaussian(&c, 5), c);
}

#[test]
fn gaussian_noise_scale_follows_curve_spread() {
    let train: Vec<f64> = (0..400).map(|i| 2.0 - i as f64 * 0.004).collect();
    let test: Vec<f64> = (0..80).map(|i| 2.1 - i as f64 * 0.02).collect();
    let c = curve(&train, &test);
    let expected = 0.5 * (population_std(&train) + population_std(&test));
    let noisy = smooth_gaussian(&c, 11);
    // losses stay well above zero here, so clamping never engages
    let diffs: Vec<f64> = noisy
        .train_losses()
        .iter()
        .zip(&train)
        .chain(noisy.test_losses().iter().zip(&test))
        .map(|(a, b)| a - b)
        .collect();
    let got = population_std(&diffs);
    assert!((got / expected - 1.0).abs() < 0.15, "{got} vs {expected}");
    assert_eq!(noisy, smooth_gaussian(&c, 11));
    assert_ne!(noisy, smooth_gaussian(&c, 12));
}

#[test]
fn tags_and_validation() {
    let tags: Vec<String> = [
        TsneDefense::EmbeddingRound { decimals: 0 },
        TsneDefense::EmbeddingThreshold { keep_fraction: 0.6 },
        TsneDefense::EmbeddingNoise { std_fraction: 0.05, seed: 0 },
        TsneDefense::CoordinateRound { unit: RoundingUnit::EvenInteger },
        TsneDefense::CoordinateNoise { std_fraction: 0.05, seed: 0 },
    ]
    .iter()
    .map(|d| d.tag())
    .chain(
        [
            LossDefense::Gaussian { seed: 0 },
            LossDefense::TensorBoard { weight: 0.2 },
            LossDefense::SlidingWindow { size: 2 },
        ]
        .iter()
        .map(|d| d.tag()),
    )
    .collect();
    assert_eq!(
        tags,
        ["E-R(0)", "E-T(0.6)", "E-N(0.05)", "C-R(even)", "C-N(0.05)", "L-gauss", "L-tb(0.2)", "L-slide(2)"]
    );
    assert!(TsneDefense::EmbeddingThreshold { keep_fraction: 0.0 }.validate().is_err());
    assert!(TsneDefense::CoordinateNoise { std_fraction: -0.1, seed: 0 }.validate().is_err());
    assert!(LossDefense::TensorBoard { weight: 1.0 }.validate().is_err());
    assert!(LossDefense::SlidingWindow { size: 0 }.validate().is_err());
}

#[test]
fn coordinate_noise_keeps_knn_utility() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut r = rng(21);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..150 {
        let c = i % 3;
        rows.push((0..8).map(|d| if d == c { 6.0 } else { 0.0 } + normal.sample(&mut r)).collect::<Vec<f64>>());
        labels.push(c);
    }
    let set = EmbeddingSet::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
    let layout = fit(&set, &TsneConfig::default()).unwrap();
    let base = knn_utility(layout.coords(), layout.labels(), 5);
    let noisy = noise_coordinates(layout.coords(), 0.05, 3);
    let after = knn_utility(&noisy, layout.labels(), 5);
    assert!(100.0 * (base - after) <= 2.0, "{base} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_strength_is_identity(values in proptest::collection::vec(-50.0f64..50.0, 1..40), seed in any::<u64>()) {
        let m = row(&values);
        prop_assert_eq!(&threshold_embeddings(&m, 1.0), &m);
        prop_assert_eq!(&noise_embeddings(&m, 0.0, seed), &m);
        prop_assert_eq!(&noise_coordinates(&m, 0.0, seed), &m);
        prop_assert_eq!(tensorboard_series(&values, 0.0), values.clone());
        prop_assert_eq!(sliding_series(&values, 0), values);
    }

    #[test]
    fn rounding_is_idempotent(values in proptest::collection::vec(-50.0f64..50.0, 1..40), decimals in 0u32..4) {
        let m = row(&values);
        let once = round_embeddings(&m, decimals);
        prop_assert_eq!(&round_embeddings(&once, decimals), &once);
        for unit in [RoundingUnit::Integer, RoundingUnit::EvenInteger] {
            let c = round_coordinates(&m, unit);
            prop_assert_eq!(&round_coordinates(&c, unit), &c);
        }
    }

    #[test]
    fn threshold_keeps_ceil_fraction(values in proptest::collection::vec(0.01f64..50.0, 1..30), keep in 0.05f64..1.0) {
        let t = threshold_embeddings(&row(&values), keep);
        let kept = t.as_slice().iter().filter(|&&v| v != 0.0).count();
        prop_assert_eq!(kept, ((keep * values.len() as f64).ceil() as usize).min(values.len()));
        let min_kept = t.as_slice().iter().filter(|&&v| v != 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
        let max_dropped = values.iter().zip(t.as_slice()).filter(|(_, &v)| v == 0.0).fold(0.0f64, |a, (&o, _)| a.max(o));
        prop_assert!(min_kept >= max_dropped);
    }

    #[test]
    fn smoothing_fixes_constant_series(c in 0.0f64..5.0, n in 1usize..30, w in 0.0f64..0.99, s in 0usize..10) {
        let v = vec![c; n];
        for (a, b) in tensorboard_series(&v, w).iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in sliding_series(&v, s).iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
