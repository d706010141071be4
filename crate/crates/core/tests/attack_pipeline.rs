mod common;

use common::*;
use plotleak::attack::{
    adaptive_train, build_attack_dataset, evaluate, query_features, split_by_model, train_attack_model,
    AttackDataset, AttackModelConfig, AttackSample, ConfusionMatrix, PlotKind, Provenance, QueryMode, Setting,
};
use plotleak::error::Error;
use plotleak::nn::{ActivationKind, FeedforwardNet, LossCurve, OptimizerKind};
use plotleak::render::PlotRaster;
use plotleak::shadow::{sample_config, FixedAssignment, HyperparamPool, InferenceTarget, ModelRecord, Role};
use proptest::prelude::*;
use rand::Rng;

const SIDE: usize = 8;

fn record(i: usize, role: Role, label: plotleak::shadow::Assignment) -> ModelRecord {
    let net = FeedforwardNet::new(&[4, 3, 3], ActivationKind::Relu, &mut rng(i as u64)).unwrap();
    ModelRecord {
        id: format!("{}{i:04}", role.name()),
        role,
        label,
        net,
        test_accuracy: 1.0,
        loss_curve: LossCurve { train: vec![], test: vec![] },
        seed: i as u64,
        attempt: i,
    }
}

fn population(n: usize, seed: u64) -> Vec<ModelRecord> {
    let pool = HyperparamPool::default();
    let mut r = rng(seed);
    (0..n).map(|i| record(i, Role::Shadow, sample_config(&pool, &mut r))).collect()
}

/// Two-class dataset over `models` source models, `per_model` plots each.
/// With `separable`, class 0 plots are black and class 1 white; otherwise
/// every plot is uniform noise.
fn toy_dataset(models: usize, per_model: usize, separable: bool, seed: u64) -> AttackDataset {
    let mut r = rng(seed);
    let mut samples = Vec::new();
    for m in 0..models {
        let label = m % 2;
        for v in 0..per_model {
            let pixels: Vec<u8> = if separable {
                vec![if label == 0 { 0 } else { 255 }; SIDE * SIDE]
            } else {
                (0..SIDE * SIDE).map(|_| r.random()).collect()
            };
            samples.push(AttackSample {
                raster: PlotRaster::from_pixels(SIDE, SIDE, 1, pixels).unwrap(),
                label,
                provenance: Provenance {
                    model_id: format!("m{m:03}"),
                    role: Role::Shadow,
                    plot_kind: PlotKind::Tsne,
                    variant: v,
                    defense: "none".into(),
                },
            });
        }
    }
    AttackDataset {
        target: InferenceTarget::Optimizer,
        candidates: vec!["adam".into(), "sgd".into()],
        samples,
    }
}

fn small_config(epochs: usize) -> AttackModelConfig {
    AttackModelConfig {
        input_side: SIDE,
        hidden: vec![16],
        epochs,
        batch_size: 8,
        learning_rate: 1e-2,
        validation_fraction: 0.5,
        ..AttackModelConfig::default()
    }
}

fn blank(_: &ModelRecord, _: usize) -> plotleak::error::Result<PlotRaster> {
    PlotRaster::filled(32, 32, 3, [255, 255, 255])
}

#[test]
fn mixed_dataset_has_one_sample_per_record_and_variant() {
    let records = population(20, 0);
    let pool = HyperparamPool::default();
    let d = build_attack_dataset(
        &records, &pool, InferenceTarget::Optimizer, &Setting::Mixed, PlotKind::Tsne, 3, "none", SIDE, blank,
    )
    .unwrap();
    assert_eq!(d.len(), 60);
    assert!(d.samples.iter().all(|s| s.raster.width() == SIDE && s.raster.channels() == 1));
    for (i, s) in d.samples.iter().enumerate() {
        let r = &records[i / 3];
        assert_eq!(s.provenance.model_id, r.id);
        assert_eq!(s.provenance.variant, i % 3);
        assert_eq!(s.label, pool.label_index(&r.label, InferenceTarget::Optimizer).unwrap());
    }
}

#[test]
fn fixed_setting_filters_and_detects_degeneracy() {
    let records = population(60, 1);
    let pool = HyperparamPool::default();
    let fixed = FixedAssignment {
        activation: Some(ActivationKind::Relu),
        ..FixedAssignment::default()
    };
    let d = build_attack_dataset(
        &records,
        &pool,
        InferenceTarget::Optimizer,
        &Setting::Fixed(fixed.clone()),
        PlotKind::LossAxes,
        1,
        "none",
        SIDE,
        blank,
    )
    .unwrap();
    let expected = records.iter().filter(|r| r.label.activation == ActivationKind::Relu).count();
    assert_eq!(d.len(), expected);

    // only adam records survive this pin, so one class remains
    let mut adam_only = records.clone();
    for r in &mut adam_only {
        if r.label.activation == ActivationKind::Relu {
            r.label.optimizer = OptimizerKind::Adam;
        }
    }
    let degenerate = build_attack_dataset(
        &adam_only,
        &pool,
        InferenceTarget::Optimizer,
        &Setting::Fixed(fixed),
        PlotKind::LossAxes,
        1,
        "none",
        SIDE,
        blank,
    );
    assert!(matches!(degenerate, Err(Error::DegenerateSetting { classes: 1 })));

    let impossible = FixedAssignment {
        hidden_layers: Some(9),
        ..FixedAssignment::default()
    };
    let none = build_attack_dataset(
        &records,
        &pool,
        InferenceTarget::Optimizer,
        &Setting::Fixed(impossible),
        PlotKind::Tsne,
        1,
        "none",
        SIDE,
        blank,
    );
    assert!(matches!(none, Err(Error::DegenerateSetting { classes: 0 })));
}

#[test]
fn class_balance_follows_pool_sampling() {
    let records = population(400, 2);
    let pool = HyperparamPool::default();
    let d = build_attack_dataset(
        &records, &pool, InferenceTarget::BatchSize, &Setting::Mixed, PlotKind::Tsne, 1, "none", SIDE, blank,
    )
    .unwrap();
    let balance = d.class_balance();
    assert_eq!(balance.iter().sum::<usize>(), 400);
    // four candidates: mean 100, σ = √(400 · ¼ · ¾) ≈ 8.7
    for c in balance {
        assert!((c as f64 - 100.0).abs() <= 3.0 * 8.67, "{c}");
    }
}

#[test]
fn separable_plots_are_learned_quickly() {
    let d = toy_dataset(20, 2, true, 0);
    let m = train_attack_model(&d, &small_config(5), 3).unwrap();
    assert_eq!(m.validation_accuracy, Some(1.0));
}

#[test]
fn shuffled_labels_score_near_chance() {
    let d = toy_dataset(400, 1, true, 1).with_shuffled_labels(5);
    assert_eq!(d.class_balance(), vec![200, 200]);
    let m = train_attack_model(&d, &small_config(5), 4).unwrap();
    let acc = m.validation_accuracy.unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "{acc}");
}

#[test]
fn training_is_seeded() {
    let d = toy_dataset(12, 2, false, 2);
    let a = train_attack_model(&d, &small_config(3), 7).unwrap();
    let b = train_attack_model(&d, &small_config(3), 7).unwrap();
    let c = train_attack_model(&d, &small_config(3), 8).unwrap();
    assert_eq!(a.net.to_text(), b.net.to_text());
    assert_ne!(a.net.to_text(), c.net.to_text());
}

#[test]
fn target_plots_are_refused() {
    let mut d = toy_dataset(6, 1, true, 3);
    d.samples[2].provenance.role = Role::Target;
    assert!(matches!(train_attack_model(&d, &small_config(1), 0), Err(Error::Leakage(_))));
}

#[test]
fn single_class_dataset_is_degenerate() {
    let mut d = toy_dataset(6, 1, true, 4);
    for s in &mut d.samples {
        s.label = 0;
    }
    assert!(matches!(train_attack_model(&d, &small_config(1), 0), Err(Error::DegenerateSetting { .. })));
}

#[test]
fn adaptive_concatenates_and_checks_label_space() {
    let a = toy_dataset(10, 1, true, 5);
    let b = toy_dataset(10, 2, true, 6);
    let joined = AttackDataset::concat(&[&a, &b]).unwrap();
    assert_eq!(joined.len(), a.len() + b.len());
    adaptive_train(&a, std::slice::from_ref(&b), &small_config(2), 0).unwrap();

    let mut other = b.clone();
    other.candidates = vec!["relu".into(), "tanh".into()];
    assert!(adaptive_train(&a, &[other], &small_config(2), 0).is_err());
}

#[test]
fn evaluation_matches_confusion_counts() {
    let train = toy_dataset(20, 1, true, 7);
    let test = toy_dataset(10, 3, true, 8);
    let m = train_attack_model(&train, &small_config(5), 1).unwrap();
    let (acc, cm) = evaluate(&m, &test).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!(cm.get(0, 1) + cm.get(1, 0), 0);
    assert_eq!(cm.row_sums(), test.class_balance());
}

#[test]
fn confusion_matrix_examples() {
    let truth: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let perfect = ConfusionMatrix::from_predictions(3, &truth, &truth).unwrap();
    for t in 0..3 {
        for p in 0..3 {
            assert_eq!(perfect.get(t, p), if t == p { 100 } else { 0 });
        }
    }
    assert_eq!(perfect.accuracy(), 1.0);

    let mut r = rng(9);
    let truth: Vec<usize> = (0..6000).map(|_| r.random_range(0..3)).collect();
    let guess: Vec<usize> = (0..6000).map(|_| r.random_range(0..3)).collect();
    let cm = ConfusionMatrix::from_predictions(3, &truth, &guess).unwrap();
    assert!((cm.accuracy() - 1.0 / 3.0).abs() < 0.03);
    assert!(ConfusionMatrix::from_predictions(3, &[0, 3], &[0, 0]).is_err());
}

#[test]
fn query_features_have_expected_shape() {
    let mut r = rng(10);
    let net = FeedforwardNet::new(&[5, 8, 10], ActivationKind::Tanh, &mut r).unwrap();
    let queries = random_matrix(100, 5, 1.0, &mut r);
    let post = query_features(&net, &queries, QueryMode::Posterior).unwrap();
    assert_eq!(post.len(), 1000);
    let twin = net.clone();
    assert_eq!(post, query_features(&twin, &queries, QueryMode::Posterior).unwrap());
    let labels = query_features(&net, &queries, QueryMode::LabelOnly).unwrap();
    for (p, l) in post.chunks(10).zip(labels.chunks(10)) {
        assert_eq!(l.iter().sum::<f64>(), 1.0);
        let hot = l.iter().position(|&v| v == 1.0).unwrap();
        assert!(p.iter().all(|&v| v <= p[hot]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_split_never_straddles(models in 2usize..40, per in 1usize..4, frac in 0.05f64..0.9, seed in any::<u64>()) {
        let d = toy_dataset(models, per, true, 0);
        let (train, val) = split_by_model(&d, frac, seed);
        prop_assert!(train.is_disjoint(&val));
        prop_assert_eq!(train.len() + val.len(), models);
        prop_assert!(!train.is_empty() && !val.is_empty());
    }

    #[test]
    fn confusion_invariants(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(4, &truth, &pred).unwrap();
        prop_assert_eq!(cm.total(), pairs.len());
        prop_assert!(cm.trace() <= cm.total());
        let agree = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert!((cm.accuracy() - agree as f64 / pairs.len() as f64).abs() < 1e-12);
        for c in 0..4 {
            prop_assert_eq!(cm.row_sums()[c], truth.iter().filter(|&&t| t == c).count());
        }
    }
}
