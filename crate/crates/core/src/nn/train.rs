use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::LabeledSet;
use super::net::{cross_entropy, FeedforwardNet};
use super::optim::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

/// Train-loss points recorded per epoch.
pub const TRAIN_POINTS_PER_EPOCH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Only used by SGD.
    #[serde(default)]
    pub momentum: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch_size and epochs must be >= 1 (got {}, {})",
                self.batch_size, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Train and test loss history. Train timestamps are fractional epochs
/// (0.2, 0.4, ...); test timestamps are whole epochs (1, 2, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<(f64, f64)>,
    pub test: Vec<(f64, f64)>,
}

impl LossCurve {
    pub fn train_losses(&self) -> Vec<f64> {
        self.train.iter().map(|p| p.1).collect()
    }

    pub fn test_losses(&self) -> Vec<f64> {
        self.test.iter().map(|p| p.1).collect()
    }

    /// Same timestamps, new loss values.
    pub fn with_losses(&self, train: &[f64], test: &[f64]) -> LossCurve {
        LossCurve {
            train: self.train.iter().zip(train).map(|(p, &l)| (p.0, l)).collect(),
            test: self.test.iter().zip(test).map(|(p, &l)| (p.0, l)).collect(),
        }
    }

    pub fn max_timestamp(&self) -> f64 {
        self.train
            .iter()
            .chain(&self.test)
            .map(|p| p.0)
            .fold(0.0, f64::max)
    }

    pub fn max_loss(&self) -> f64 {
        self.train
            .iter()
            .chain(&self.test)
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }

    /// CSV rows `timestamp,split,loss`, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,split,loss\n");
        for (split, points) in [("train", &self.train), ("test", &self.test)] {
            for (t, l) in points {
                out.push_str(&format!("{t:?},{split},{l:?}\n"));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::InvalidArgument(format!("bad loss curve row {line:?}"));
        let mut curve = LossCurve {
            train: Vec::new(),
            test: Vec::new(),
        };
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let mut parts = line.split(',');
            let t: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
            let split = parts.next().ok_or_else(|| bad(line))?;
            let l: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
            match split {
                "train" => curve.train.push((t, l)),
                "test" => curve.test.push((t, l)),
                _ => return Err(bad(line)),
            }
        }
        Ok(curve)
    }
}

/// Batch index ranges for the five recording windows of one epoch. The
/// epoch's batches are cut into five contiguous fifths with any remainder
/// joining the last; with fewer than five batches, each window takes the
/// batch in progress at that fraction of the epoch.
pub fn recording_windows(batches: usize) -> [std::ops::Range<usize>; TRAIN_POINTS_PER_EPOCH] {
    let parts = TRAIN_POINTS_PER_EPOCH;
    let q = batches / parts;
    std::array::from_fn(|k| {
        if q == 0 {
            let b = k * batches / parts;
            b..b + 1
        } else if k + 1 == parts {
            k * q..batches
        } else {
            k * q..(k + 1) * q
        }
    })
}

/// Seeded mini-batch SGD/Adam loop over one training set, one epoch at a time.
pub struct Trainer {
    net: FeedforwardNet,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    batch_size: usize,
    order: Vec<usize>,
}

impl Trainer {
    pub fn new(net: FeedforwardNet, config: &TrainConfig, train_len: usize) -> Result<Self> {
        config.validate()?;
        if train_len == 0 {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let batch_size = if config.batch_size > train_len {
            log::warn!(
                "batch size {} exceeds dataset size {train_len}; using one full batch per step",
                config.batch_size
            );
            train_len
        } else {
            config.batch_size
        };
        let opt = OptimizerState::new(config.optimizer, &net, config.learning_rate, config.momentum);
        Ok(Self {
            net,
            opt,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            batch_size,
            order: (0..train_len).collect(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn net(&self) -> &FeedforwardNet {
        &self.net
    }

    pub fn into_net(self) -> FeedforwardNet {
        self.net
    }

    /// Shuffles, then takes one optimizer step per mini-batch. Returns each
    /// batch's loss measured before its update.
    pub fn run_epoch(&mut self, set: &LabeledSet) -> Result<Vec<f64>> {
        if set.len() != self.order.len() {
            return Err(Error::shape("Trainer::run_epoch", self.order.len(), set.len()));
        }
        self.order.shuffle(&mut self.rng);
        let mut losses = Vec::with_capacity(self.batches_per_epoch());
        for chunk in self.order.chunks(self.batch_size) {
            let batch = set.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
            let pass = self.net.forward(&batch)?;
            if !pass.logits.is_finite() {
                return Err(Error::NonFinite {
                    what: "logits",
                    step: self.opt.step_count() as usize,
                });
            }
            losses.push(cross_entropy(&pass.probabilities, &labels)?);
            let grads = self.net.backward(&pass, &labels)?;
            self.opt.step(&mut self.net, &grads)?;
        }
        Ok(losses)
    }
}

/// Mini-batch training on mean cross-entropy. Records the average train loss
/// of each fifth of every epoch and the test loss after every epoch.
pub fn train(
    net: FeedforwardNet,
    train_set: &LabeledSet,
    test_set: &LabeledSet,
    config: &TrainConfig,
) -> Result<(FeedforwardNet, LossCurve)> {
    let mut trainer = Trainer::new(net, config, train_set.len())?;
    let windows = recording_windows(trainer.batches_per_epoch());
    let mut curve = LossCurve {
        train: Vec::with_capacity(config.epochs * TRAIN_POINTS_PER_EPOCH),
        test: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let batch_losses = trainer.run_epoch(train_set)?;
        for (k, w) in windows.iter().enumerate() {
            let mean = batch_losses[w.clone()].iter().sum::<f64>() / w.len() as f64;
            let t = epoch as f64 + (k + 1) as f64 / TRAIN_POINTS_PER_EPOCH as f64;
            curve.train.push((t, mean));
        }
        let test_loss = evaluate_loss(trainer.net(), test_set)?;
        if !test_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "test loss",
                step: epoch,
            });
        }
        curve.test.push(((epoch + 1) as f64, test_loss));
    }
    let net = trainer.into_net();
    if net.layers().iter().any(|l| !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite())) {
        return Err(Error::NonFinite {
            what: "weights",
            step: config.epochs,
        });
    }
    Ok((net, curve))
}

pub fn evaluate_loss(net: &FeedforwardNet, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let p = net.predict_proba(&set.features)?;
    cross_entropy(&p, &set.labels)
}
