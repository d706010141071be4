mod common;

use common::*;
use plotleak::adversarial::{
    feature_clamp, fgsm, fgsm_batch, run_downstream, select_surrogate, transfer_eval, AdvConfig, SurrogateSelection,
};
use plotleak::nn::{ActivationKind, LossCurve, OptimizerKind};
use plotleak::shadow::{
    make_synthetic_dataset, partition, train_population, Assignment, DatasetBundle, FixedAssignment, HyperparamPool,
    MemberTraining, ModelRecord, PopulationSpec, Role, SyntheticSpec,
};
use proptest::prelude::*;

fn assignment(act: ActivationKind, layers: usize, opt: OptimizerKind, bs: usize) -> Assignment {
    Assignment {
        activation: act,
        hidden_layers: layers,
        optimizer: opt,
        batch_size: bs,
    }
}

fn fake(id: &str, role: Role, label: Assignment) -> ModelRecord {
    let net = plotleak::nn::FeedforwardNet::new(&[2, 3, 2], ActivationKind::Relu, &mut rng(0)).unwrap();
    ModelRecord {
        id: id.into(),
        role,
        label,
        net,
        test_accuracy: 1.0,
        loss_curve: LossCurve { train: vec![], test: vec![] },
        seed: 0,
        attempt: 0,
    }
}

fn bundle() -> DatasetBundle {
    let spec = SyntheticSpec {
        classes: 3,
        dims: 6,
        samples_per_class: 120,
        center_scale: 2.0,
        seed: 4,
        ..SyntheticSpec::default()
    };
    partition(&make_synthetic_dataset(&spec).unwrap(), [0.25; 4], 5).unwrap()
}

fn trained(bundle: &DatasetBundle, role: Role, count: usize) -> Vec<ModelRecord> {
    let training = MemberTraining {
        hidden_width: 16,
        epochs: 8,
        adam_learning_rate: 0.02,
        sgd_learning_rate: 0.1,
        ..MemberTraining::default()
    };
    let spec = PopulationSpec {
        role,
        count,
        filter_threshold: 0.6,
        retry_factor: 3,
        master_seed: 8,
    };
    train_population(bundle, &HyperparamPool::default(), &training, &spec).unwrap().0
}

fn unbounded(d: usize) -> Vec<(f64, f64)> {
    vec![(f64::NEG_INFINITY, f64::INFINITY); d]
}

#[test]
fn zero_epsilon_is_identity() {
    let net = random_net(&[5, 7, 3], ActivationKind::Tanh, &mut rng(1));
    let x = [0.1, -0.4, 0.3, 0.9, -1.0];
    assert_eq!(fgsm(&net, &x, 2, 0.0, &unbounded(5)).unwrap(), x.to_vec());
    assert!(fgsm(&net, &x, 2, -0.1, &unbounded(5)).is_err());
}

#[test]
fn linear_victim_matches_closed_form() {
    // softmax(xW + b): ∇ₓ loss = W (p − e_y)
    let mut r = rng(2);
    for trial in 0..10 {
        let net = random_net(&[6, 4], ActivationKind::Relu, &mut r);
        let x: Vec<f64> = random_matrix(1, 6, 1.0, &mut r).as_slice().to_vec();
        let y = trial % 4;
        let p = naive_forward(&net, &x);
        let w = &net.layers()[0].weight;
        let grad: Vec<f64> = (0..6)
            .map(|i| (0..4).map(|j| w.get(i, j) * (p[j] - if j == y { 1.0 } else { 0.0 })).sum())
            .collect();
        let eps = 1e-3;
        let adv = fgsm(&net, &x, y, eps, &unbounded(6)).unwrap();
        for i in 0..6 {
            assert_eq!(adv[i] - x[i] > 0.0, grad[i] > 0.0);
            assert!(((adv[i] - x[i]).abs() - eps).abs() < 1e-12);
        }
        let loss = |v: &[f64]| -naive_forward(&net, v)[y].ln();
        let predicted = eps * grad.iter().map(|g| g.abs()).sum::<f64>();
        let actual = loss(&adv) - loss(&x);
        assert!((actual - predicted).abs() <= 0.1 * predicted, "{actual} vs {predicted}");
    }
}

#[test]
fn batch_matches_single_samples_and_clamps() {
    let mut r = rng(3);
    let net = random_net(&[4, 6, 3], ActivationKind::Elu, &mut r);
    let batch = random_matrix(10, 4, 1.0, &mut r);
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let clamp = vec![(-0.5, 0.5); 4];
    let out = fgsm_batch(&net, &batch, &labels, 0.3, &clamp).unwrap();
    for row in 0..10 {
        let single = fgsm(&net, batch.row(row), labels[row], 0.3, &clamp).unwrap();
        assert_eq!(out.row(row), single.as_slice());
        assert!(single.iter().all(|v| (-0.5..=0.5).contains(v)));
    }
}

#[test]
fn surrogate_selection_rules() {
    use ActivationKind::*;
    use OptimizerKind::*;
    let target = fake("t", Role::Target, assignment(Relu, 2, Adam, 32));
    let shadows = vec![
        fake("a", Role::Shadow, assignment(Tanh, 2, Adam, 32)),
        fake("b", Role::Shadow, assignment(Relu, 3, Sgd, 64)),
        fake("c", Role::Shadow, assignment(Elu, 4, Sgd, 16)),
    ];
    let mut r = rng(4);
    let wb = select_surrogate(&target, &shadows, &FixedAssignment::default(), SurrogateSelection::WhiteBox, &mut r)
        .unwrap();
    assert_eq!(wb.record.id, "t");

    let tanh = FixedAssignment {
        activation: Some(Tanh),
        ..FixedAssignment::default()
    };
    for _ in 0..10 {
        let c = select_surrogate(&target, &shadows, &tanh, SurrogateSelection::Inferred, &mut r).unwrap();
        assert_eq!(c.record.id, "a");
        assert!(!c.fallback);
    }

    // no shadow matches all three pins; "b" agrees on two of them
    let unmatched = FixedAssignment {
        activation: Some(Relu),
        optimizer: Some(Adam),
        batch_size: Some(64),
        ..FixedAssignment::default()
    };
    let c = select_surrogate(&target, &shadows, &unmatched, SurrogateSelection::Inferred, &mut r).unwrap();
    assert_eq!(c.record.id, "b");
    assert!(c.fallback);

    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..60 {
        seen.insert(select_surrogate(&target, &shadows, &tanh, SurrogateSelection::Random, &mut r).unwrap().record.id.clone());
    }
    assert_eq!(seen.len(), 3);
    assert!(select_surrogate(&target, &[], &tanh, SurrogateSelection::Random, &mut r).is_err());
}

#[test]
fn white_box_rate_grows_with_epsilon() {
    let b = bundle();
    let targets = trained(&b, Role::Target, 2);
    let clamp = feature_clamp(&b);
    for t in &targets {
        let rates = transfer_eval(&t.net, &t.net, &b.target_test, &[1e-9, 0.02, 0.5], &clamp).unwrap();
        assert_eq!(rates[0].misclassified, 0);
        assert!(rates[2].rate > rates[1].rate, "{rates:?}");
        assert!(rates.iter().all(|r| r.filtered_count == rates[0].filtered_count));
    }
}

#[test]
fn downstream_is_deterministic_and_complete() {
    let b = bundle();
    let targets = trained(&b, Role::Target, 2);
    let shadows = trained(&b, Role::Shadow, 6);
    let inferred: Vec<FixedAssignment> = targets
        .iter()
        .map(|t| FixedAssignment {
            optimizer: Some(t.label.optimizer),
            ..FixedAssignment::default()
        })
        .collect();
    let config = AdvConfig {
        epsilons: vec![0.1, 0.3],
        sample_count: 40,
        repetitions: 3,
    };
    let rows = run_downstream(&b, &targets, &shadows, &inferred, &config, 1).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 3);
    assert_eq!(rows, run_downstream(&b, &targets, &shadows, &inferred, &config, 1).unwrap());
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.rate) && (0.0..=1.0).contains(&r.unfiltered_rate));
        if r.mode != SurrogateSelection::Inferred {
            assert_eq!(r.fallbacks, 0);
        }
    }
    assert!(run_downstream(&b, &targets, &shadows, &inferred[..1], &config, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbation_is_bounded(seed in any::<u64>(), eps in 0.0f64..2.0, label in 0usize..3) {
        let mut r = rng(seed);
        let net = random_net(&[5, 8, 3], ActivationKind::Relu, &mut r);
        let x: Vec<f64> = random_matrix(1, 5, 1.0, &mut r).as_slice().to_vec();
        let clamp = vec![(-1.0, 1.0); 5];
        let adv = fgsm(&net, &x, label, eps, &clamp).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            prop_assert!((a - b).abs() <= eps + 1e-12);
            prop_assert!((-1.0..=1.0).contains(a));
        }
        let free = fgsm(&net, &x, label, eps, &unbounded(5)).unwrap();
        for (a, b) in free.iter().zip(&x) {
            let d = (a - b).abs();
            prop_assert!(d == 0.0 || (d - eps).abs() < 1e-12);
        }
    }
}

