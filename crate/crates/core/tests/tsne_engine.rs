mod common;

use common::*;
use plotleak::nn::Matrix;
use plotleak::tsne::{
    conditional_affinities, conditional_affinities_lenient, fit, fit_traced, kl_divergence, kl_gradient,
    knn_utility, low_dim_affinities, row_perplexity, symmetrize, AffinityMatrix, EmbeddingSet, TsneConfig,
    TsneLayout,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn check_affinity(m: &AffinityMatrix) {
    let n = m.n();
    assert!((m.total() - 1.0).abs() < 1e-9, "total {}", m.total());
    for i in 0..n {
        assert_eq!(m.get(i, i), 0.0);
        for j in 0..n {
            assert!(m.get(i, j) >= 0.0);
            assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
        }
    }
}

/// Natural-log entropy perplexity recomputed independently of the library.
fn perplexity_of(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / std::f64::consts::LN_2).exp2()
}

#[test]
fn perplexity_is_reached_on_random_inputs() {
    for seed in 0..5 {
        let x = random_matrix(40, 5, 3.0, &mut rng(seed));
        for perp in [5.0, 15.0, 30.0] {
            let c = conditional_affinities(&x, perp).unwrap();
            for i in 0..40 {
                let row = c.rows.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row[i], 0.0);
                let p = perplexity_of(row);
                assert!(((p - perp) / perp).abs() < 1e-3, "row {i}: {p} vs {perp}");
                assert!((row_perplexity(row) - p).abs() < 1e-9);
            }
        }
    }
    let small = random_matrix(6, 3, 1.0, &mut rng(9));
    let c = conditional_affinities(&small, 3.0).unwrap();
    for i in 0..6 {
        assert!(((perplexity_of(c.rows.row(i)) - 3.0) / 3.0).abs() < 1e-3);
    }
}

#[test]
fn equidistant_points_have_uniform_rows() {
    let x = Matrix::from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let c = conditional_affinities_lenient(&x, 2.0).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let expect = if i == j { 0.0 } else { 1.0 / 3.0 };
            assert!((c.rows.get(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn duplicate_point_gets_largest_affinity() {
    let x = Matrix::from_rows(&[
        vec![0.0, 0.0],
        vec![0.0, 0.0],
        vec![5.0, 1.0],
        vec![-4.0, 3.0],
        vec![2.0, -6.0],
        vec![7.0, 7.0],
    ])
    .unwrap();
    let c = conditional_affinities(&x, 2.0).unwrap();
    let row = c.rows.row(0);
    assert!(row.iter().enumerate().all(|(j, &v)| j == 1 || v < row[1]));
}

#[test]
fn perplexity_bounds_are_rejected() {
    let x = random_matrix(5, 2, 1.0, &mut rng(1));
    assert!(conditional_affinities(&x, 5.0).is_err());
    assert!(conditional_affinities(&x, 1.0).is_err());
}

#[test]
fn symmetrize_hand_cases() {
    // two points: each conditional row is [0, 1]
    let two = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let p = symmetrize(&two).unwrap();
    assert_eq!(p.get(0, 1), 0.5);
    check_affinity(&p);
    // three points, asymmetric conditionals
    let c = Matrix::from_rows(&[vec![0.0, 0.75, 0.25], vec![0.5, 0.0, 0.5], vec![0.1, 0.9, 0.0]]).unwrap();
    let p = symmetrize(&c).unwrap();
    assert!((p.get(0, 1) - (0.75 + 0.5) / 6.0).abs() < 1e-15);
    assert!((p.get(0, 2) - (0.25 + 0.1) / 6.0).abs() < 1e-15);
    assert!((p.get(1, 2) - (0.5 + 0.9) / 6.0).abs() < 1e-15);
    check_affinity(&p);
}

#[test]
fn low_dim_affinity_cases() {
    let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![30.0, -4.0]]).unwrap();
    let q = low_dim_affinities(&two).unwrap();
    assert_eq!(q.get(0, 1), 0.5);
    let h = 3f64.sqrt() / 2.0;
    let tri = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]).unwrap();
    let q = low_dim_affinities(&tri).unwrap();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        assert!((q.get(i, j) - 1.0 / 6.0).abs() < 1e-12);
    }
}

#[test]
fn low_dim_affinities_match_naive_oracle() {
    for n in [2, 5, 17, 50] {
        let y = random_matrix(n, 2, 4.0, &mut rng(n as u64));
        let q = low_dim_affinities(&y).unwrap();
        let oracle = naive_q(&y);
        for i in 0..n {
            for j in 0..n {
                assert!((q.get(i, j) - oracle[i][j]).abs() < 1e-12);
            }
        }
        check_affinity(&q);
    }
}

#[test]
fn kl_cases() {
    let x = random_matrix(5, 3, 1.0, &mut rng(2));
    let p = symmetrize(&conditional_affinities(&x, 2.5).unwrap().rows).unwrap();
    check_affinity(&p);
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    // hand computation on a 3-point instance
    let c = Matrix::from_rows(&[vec![0.0, 0.75, 0.25], vec![0.5, 0.0, 0.5], vec![0.1, 0.9, 0.0]]).unwrap();
    let p3 = symmetrize(&c).unwrap();
    let y = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let q3 = low_dim_affinities(&y).unwrap();
    let (a, b, d): (f64, f64, f64) = (1.0 / 2.0, 1.0 / 5.0, 1.0 / 6.0);
    let z = 2.0 * (a + b + d);
    let pairs: [(f64, f64); 3] = [((0.75 + 0.5) / 6.0, a / z), ((0.25 + 0.1) / 6.0, b / z), ((0.5 + 0.9) / 6.0, d / z)];
    let hand: f64 = pairs.iter().map(|(p, q)| 2.0 * p * (p / q).ln()).sum();
    assert!((kl_divergence(&p3, &q3).unwrap() - hand).abs() < 1e-12);
}

#[test]
fn layout_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(50 + seed);
        let x = random_matrix(5, 4, 2.0, &mut r);
        let p = symmetrize(&conditional_affinities(&x, 2.0).unwrap().rows).unwrap();
        let y = random_matrix(5, 2, 1.0, &mut r);
        let g = kl_gradient(&p, &y).unwrap();
        for i in 0..5 {
            for d in 0..2 {
                let num = central_difference(
                    |v| {
                        let mut yy = y.clone();
                        yy.set(i, d, v);
                        kl_divergence(&p, &low_dim_affinities(&yy).unwrap()).unwrap()
                    },
                    y.get(i, d),
                    1e-5,
                );
                let err = rel_err(g.get(i, d), num, 1e-6);
                assert!(err < 1e-4, "seed {seed} ({i},{d}): {} vs {num}", g.get(i, d));
            }
        }
    }
}

fn blobs(n_per: usize, dims: usize, sep: f64, seed: u64) -> EmbeddingSet {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..n_per {
            for d in 0..dims {
                let center = if d == 0 { sep * c as f64 } else { 0.0 };
                values.push(center + normal.sample(&mut r));
            }
            labels.push(c);
        }
    }
    EmbeddingSet::new(Matrix::from_vec(2 * n_per, dims, values).unwrap(), labels).unwrap()
}

#[test]
fn separated_blobs_stay_separated() {
    let emb = blobs(40, 8, 12.0, 3);
    let config = TsneConfig {
        perplexity: 15.0,
        ..TsneConfig::default()
    };
    let layout = fit(&emb, &config).unwrap();
    assert!(knn_utility(layout.coords(), layout.labels(), 5) >= 0.95);
}

#[test]
fn fit_is_deterministic_and_kl_settles() {
    let emb = blobs(25, 6, 6.0, 4);
    let mut settled = 0;
    for seed in 0..10 {
        let config = TsneConfig {
            perplexity: 10.0,
            seed,
            ..TsneConfig::default()
        };
        let (a, kl) = fit_traced(&emb, &config, true).unwrap();
        if seed == 0 {
            let b = fit(&emb, &config).unwrap();
            assert_eq!(a, b);
        }
        // least-squares slope of KL over the last 100 iterations
        let tail = &kl[kl.len() - 100..];
        let mx = 49.5;
        let my = tail.iter().sum::<f64>() / 100.0;
        let slope: f64 = tail.iter().enumerate().map(|(i, v)| (i as f64 - mx) * (v - my)).sum::<f64>()
            / (0..100).map(|i| (i as f64 - mx).powi(2)).sum::<f64>();
        if slope <= 0.0 {
            settled += 1;
        }
    }
    assert!(settled >= 9, "{settled}/10");
}

#[test]
fn identical_points_still_fit() {
    let emb = EmbeddingSet::new(Matrix::from_vec(8, 3, vec![1.0; 24]).unwrap(), vec![0; 8]).unwrap();
    let config = TsneConfig {
        perplexity: 3.0,
        iterations: 50,
        ..TsneConfig::default()
    };
    let layout = fit(&emb, &config).unwrap();
    assert!(layout.coords().is_finite());
}

#[test]
fn knn_cases() {
    let dup = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![9.0, 9.0], vec![9.0, 9.0]]).unwrap();
    assert_eq!(knn_utility(&dup, &[0, 0, 1, 1], 1), 1.0);
    // shuffled labels on random points
    let mut r = rng(11);
    let n = 2000;
    let coords = random_matrix(n, 2, 1.0, &mut r);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut r);
    let u = knn_utility(&coords, &labels, 5);
    assert!((u - 0.5).abs() <= 0.05, "{u}");
}

#[test]
fn layout_csv_round_trip() {
    let mut r = rng(12);
    let layout = TsneLayout::new(random_matrix(7, 2, 3.0, &mut r), (0..7).map(|i| i % 3).collect()).unwrap();
    assert_eq!(TsneLayout::from_csv(&layout.to_csv()).unwrap(), layout);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn joint_affinities_are_valid(seed in 0u64..10_000, n in 6usize..20) {
        let mut r = rng(seed);
        let x = random_matrix(n, 3, r.random_range(0.1..10.0), &mut r);
        let perp = r.random_range(1.5..(n as f64 - 1.0));
        let c = conditional_affinities_lenient(&x, perp).unwrap();
        check_affinity(&symmetrize(&c.rows).unwrap());
        let y = random_matrix(n, 2, 5.0, &mut r);
        let q = low_dim_affinities(&y).unwrap();
        check_affinity(&q);
        let p = symmetrize(&c.rows).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
    }

    #[test]
    fn knn_utility_is_a_fraction(seed in 0u64..10_000, k in 1usize..8) {
        let mut r = rng(seed);
        let coords = random_matrix(20, 2, 1.0, &mut r);
        let labels: Vec<usize> = (0..20).map(|_| r.random_range(0..3)).collect();
        let u = knn_utility(&coords, &labels, k);
        prop_assert!((0.0..=1.0).contains(&u));
    }
}
