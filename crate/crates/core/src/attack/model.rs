use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::AttackDataset;
use crate::error::{Error, Result};
use crate::nn::{
    ActivationKind, FeedforwardNet, LabeledSet, Matrix, OptimizerKind, TrainConfig, Trainer,
};
use crate::shadow::Role;

/// k×k counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_predictions(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("ConfusionMatrix", truth.len(), predicted.len()));
        }
        let mut m = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::InvalidArgument(format!(
                "class ({truth}, {predicted}) outside {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum; both must have the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape("ConfusionMatrix::merge", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Trace over total; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).sum())
            .collect()
    }

    /// Per-class recall; `None` for classes never seen.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.row_sums()
            .iter()
            .enumerate()
            .map(|(i, &n)| (n > 0).then(|| self.get(i, i) as f64 / n as f64))
            .collect()
    }

    /// Header row of candidate names, then one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.k {
            out.push_str(names.get(i).map(String::as_str).unwrap_or("?"));
            for j in 0..self.k {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// The attack classifier's architecture and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackModelConfig {
    /// Side of the square downsampled raster the net reads.
    pub input_side: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Fraction of source models held out for validation (split by model id).
    pub validation_fraction: f64,
    /// Keep the weights of the epoch with the best validation accuracy.
    pub select_best_epoch: bool,
}

impl Default for AttackModelConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            hidden: vec![256, 256],
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
            select_best_epoch: false,
        }
    }
}

impl AttackModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_side == 0 {
            problems.push("attack.model.input_side must be >= 1".to_string());
        }
        if self.hidden.contains(&0) {
            problems.push("attack.model.hidden widths must be >= 1".to_string());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            problems.push("attack.model.epochs and batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("attack.model.learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            problems.push(format!(
                "attack.model.validation_fraction {} must be in [0, 1)",
                self.validation_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// A trained attack classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub net: FeedforwardNet,
    pub candidates: Vec<String>,
    /// Accuracy on the held-out source models, if any were held out.
    pub validation_accuracy: Option<f64>,
}

impl AttackModel {
    pub fn predict(&self, data: &AttackDataset) -> Result<Vec<usize>> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        self.net.predict(&features(data, &(0..data.len()).collect::<Vec<_>>())?)
    }
}

fn features(data: &AttackDataset, rows: &[usize]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = rows.iter().map(|&i| data.samples[i].features()).collect();
    Matrix::from_rows(&rows)
}

fn labeled(data: &AttackDataset, rows: &[usize]) -> Result<LabeledSet> {
    LabeledSet::new(
        features(data, rows)?,
        rows.iter().map(|&i| data.samples[i].label).collect(),
        data.class_count(),
    )
}

/// Source-model ids split into (train, validation), shuffled by `seed`.
pub fn split_by_model(data: &AttackDataset, fraction: f64, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut ids: Vec<String> = data.model_ids().into_iter().map(String::from).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (fraction * ids.len() as f64).round() as usize;
    if fraction > 0.0 && ids.len() >= 2 {
        n_val = n_val.clamp(1, ids.len() - 1);
    }
    let val = ids.split_off(ids.len() - n_val);
    (ids.into_iter().collect(), val.into_iter().collect())
}

/// Rejects any dataset containing plots of target models.
pub fn check_no_target_plots(data: &AttackDataset) -> Result<()> {
    match data.samples.iter().find(|s| s.provenance.role == Role::Target) {
        Some(s) => Err(Error::Leakage(format!(
            "plot of target model {} ({}, {}) in attack training data",
            s.provenance.model_id, s.provenance.plot_kind, s.provenance.defense
        ))),
        None => Ok(()),
    }
}

/// Trains the attack classifier on shadow plots. Validation holds out whole
/// source models.
pub fn train_attack_model(data: &AttackDataset, config: &AttackModelConfig, seed: u64) -> Result<AttackModel> {
    config.validate()?;
    check_no_target_plots(data)?;
    if data.classes_present() < 2 {
        return Err(Error::DegenerateSetting {
            classes: data.classes_present(),
        });
    }
    let side = config.input_side;
    if let Some(s) = data
        .samples
        .iter()
        .find(|s| s.raster.width() != side || s.raster.height() != side)
    {
        return Err(Error::shape(
            "train_attack_model",
            side * side,
            s.raster.width() * s.raster.height(),
        ));
    }
    let (train_ids, val_ids) = split_by_model(data, config.validation_fraction, seed);
    let (mut train_rows, mut val_rows) = (Vec::new(), Vec::new());
    for (i, s) in data.samples.iter().enumerate() {
        if val_ids.contains(&s.provenance.model_id) {
            val_rows.push(i);
        } else {
            debug_assert!(train_ids.contains(&s.provenance.model_id));
            train_rows.push(i);
        }
    }
    let train_set = labeled(data, &train_rows)?;
    let val_set = (!val_rows.is_empty()).then(|| labeled(data, &val_rows)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![side * side];
    dims.extend(&config.hidden);
    dims.push(data.class_count());
    let net = FeedforwardNet::new(&dims, ActivationKind::Relu, &mut rng)?;
    let train_config = TrainConfig {
        batch_size: config.batch_size,
        epochs: config.epochs,
        seed: crate::seed::derive(seed, &[1]),
        optimizer: config.optimizer,
        learning_rate: config.learning_rate,
        momentum: 0.0,
    };
    let mut trainer = Trainer::new(net, &train_config, train_set.len())?;
    let mut best: Option<(f64, FeedforwardNet)> = None;
    for epoch in 0..config.epochs {
        let losses = trainer.run_epoch(&train_set)?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                what: "attack training loss",
                step: epoch,
            });
        }
        if let (true, Some(v)) = (config.select_best_epoch, &val_set) {
            let acc = trainer.net().accuracy(&v.features, &v.labels)?;
            if best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, trainer.net().clone()));
            }
        }
    }
    let net = match best {
        Some((_, net)) => net,
        None => trainer.into_net(),
    };
    let validation_accuracy = val_set
        .map(|v| net.accuracy(&v.features, &v.labels))
        .transpose()?;
    Ok(AttackModel {
        net,
        candidates: data.candidates.clone(),
        validation_accuracy,
    })
}

/// Accuracy and confusion matrix on held-out plots.
pub fn evaluate(model: &AttackModel, data: &AttackDataset) -> Result<(f64, ConfusionMatrix)> {
    if model.candidates != data.candidates {
        return Err(Error::InvalidArgument(format!(
            "attack model candidates {:?} differ from evaluation candidates {:?}",
            model.candidates, data.candidates
        )));
    }
    let predicted = model.predict(data)?;
    let truth: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
    let cm = ConfusionMatrix::from_predictions(data.class_count(), &truth, &predicted)?;
    Ok((cm.accuracy(), cm))
}

/// One model over the original plots plus every defended variant.
pub fn adaptive_train(
    original: &AttackDataset,
    defended: &[AttackDataset],
    config: &AttackModelConfig,
    seed: u64,
) -> Result<AttackModel> {
    let mut parts = vec![original];
    parts.extend(defended);
    train_attack_model(&AttackDataset::concat(&parts)?, config, seed)
}
