use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{sample_rows, DatasetBundle};
use super::pool::{sample_config, Assignment, HyperparamPool};
use crate::error::{Error, Result};
use crate::nn::{train, FeedforwardNet, LabeledSet, LossCurve, OptimizerKind, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Shadow,
    Target,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Self::Shadow => "shadow",
            Self::Target => "target",
        }
    }

    fn key(self) -> u64 {
        match self {
            Self::Shadow => 1,
            Self::Target => 2,
        }
    }

    pub fn train_split(self, bundle: &DatasetBundle) -> &LabeledSet {
        match self {
            Self::Shadow => &bundle.shadow_train,
            Self::Target => &bundle.target_train,
        }
    }

    pub fn test_split(self, bundle: &DatasetBundle) -> &LabeledSet {
        match self {
            Self::Shadow => &bundle.shadow_test,
            Self::Target => &bundle.target_test,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training settings shared by every population member; none of these are
/// inference targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemberTraining {
    pub hidden_width: usize,
    pub epochs: usize,
    pub adam_learning_rate: f64,
    pub sgd_learning_rate: f64,
    pub sgd_momentum: f64,
    /// Train each member on this many samples drawn from its role's train
    /// split; `None` uses the whole split.
    pub train_samples: Option<usize>,
}

impl Default for MemberTraining {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            epochs: 10,
            adam_learning_rate: 0.01,
            sgd_learning_rate: 0.01,
            sgd_momentum: 0.0,
            train_samples: None,
        }
    }
}

impl MemberTraining {
    pub fn train_config(&self, label: &Assignment, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: label.batch_size,
            epochs: self.epochs,
            seed,
            optimizer: label.optimizer,
            learning_rate: match label.optimizer {
                OptimizerKind::Adam => self.adam_learning_rate,
                OptimizerKind::Sgd => self.sgd_learning_rate,
            },
            momentum: self.sgd_momentum,
        }
    }
}

/// A trained population member and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    /// Content address: hash of the serialized net and label.
    pub id: String,
    pub role: Role,
    pub label: Assignment,
    pub net: FeedforwardNet,
    pub test_accuracy: f64,
    pub loss_curve: LossCurve,
    pub seed: u64,
    /// Attempt index within the population that produced this record.
    pub attempt: usize,
}

impl ModelRecord {
    pub fn content_id(net: &FeedforwardNet, label: &Assignment) -> String {
        let mut text = net.to_text();
        text.push_str(&label.to_text());
        seed::hash_hex(text.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub role: Role,
    pub count: usize,
    pub filter_threshold: f64,
    /// Replacement attempts allowed, as a multiple of `count`.
    pub retry_factor: usize,
    pub master_seed: u64,
}

/// Result of one training attempt.
#[derive(Debug, Clone)]
pub enum AttemptOutcome {
    Accepted(Box<ModelRecord>),
    Rejected { label: Assignment, accuracy: f64 },
    Diverged { label: Assignment, reason: String },
}

pub fn attempt_seed(master_seed: u64, role: Role, attempt: usize) -> u64 {
    seed::derive(master_seed, &[role.key(), attempt as u64])
}

/// Trains population member `attempt` of `role`. Everything is derived from
/// `(master_seed, role, attempt)`, so the same attempt always yields the
/// same model.
pub fn train_member(
    bundle: &DatasetBundle,
    pool: &HyperparamPool,
    training: &MemberTraining,
    spec: &PopulationSpec,
    attempt: usize,
) -> Result<AttemptOutcome> {
    let member_seed = attempt_seed(spec.master_seed, spec.role, attempt);
    let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
    let label = sample_config(pool, &mut rng);
    let mut dims = vec![bundle.dims()];
    dims.extend(std::iter::repeat_n(training.hidden_width, label.hidden_layers));
    dims.push(bundle.class_count());
    let net = FeedforwardNet::new(&dims, label.activation, &mut rng)?;
    let full_train = spec.role.train_split(bundle);
    let train_set = match training.train_samples {
        Some(k) => full_train.subset(&sample_rows(
            full_train.len(),
            k,
            seed::derive(member_seed, &[11]),
        )),
        None => full_train.clone(),
    };
    let test_set = spec.role.test_split(bundle);
    let config = training.train_config(&label, seed::derive(member_seed, &[7]));
    let (net, loss_curve) = match train(net, &train_set, test_set, &config) {
        Ok(v) => v,
        Err(e @ Error::NonFinite { .. }) => {
            return Ok(AttemptOutcome::Diverged {
                label,
                reason: e.to_string(),
            })
        }
        Err(e) => return Err(e),
    };
    let test_accuracy = net.accuracy(&test_set.features, &test_set.labels)?;
    if test_accuracy < spec.filter_threshold {
        return Ok(AttemptOutcome::Rejected {
            label,
            accuracy: test_accuracy,
        });
    }
    Ok(AttemptOutcome::Accepted(Box::new(ModelRecord {
        id: ModelRecord::content_id(&net, &label),
        role: spec.role,
        label,
        net,
        test_accuracy,
        loss_curve,
        seed: member_seed,
        attempt,
    })))
}

/// Bookkeeping from a population run.
#[derive(Debug, Clone, Default)]
pub struct PopulationStats {
    pub attempts: usize,
    pub rejected: Vec<(usize, String)>,
}

/// Trains `spec.count` members of a role, discarding any whose test accuracy
/// is below the filter threshold and training replacements, up to
/// `retry_factor × count` extra attempts. Attempts run in waves (parallel
/// within a wave); survivors are returned in attempt order.
pub fn train_population(
    bundle: &DatasetBundle,
    pool: &HyperparamPool,
    training: &MemberTraining,
    spec: &PopulationSpec,
) -> Result<(Vec<ModelRecord>, PopulationStats)> {
    if spec.count == 0 {
        return Err(Error::InvalidArgument("population count must be >= 1".into()));
    }
    pool.validate()?;
    let budget = spec.count + spec.retry_factor * spec.count;
    let mut survivors: Vec<ModelRecord> = Vec::with_capacity(spec.count);
    let mut stats = PopulationStats::default();
    let mut next = 0;
    while survivors.len() < spec.count {
        let want = spec.count - survivors.len();
        let end = (next + want).min(budget);
        if next >= end {
            return Err(Error::RetryBudgetExhausted {
                attempts: stats.attempts,
                failing: stats.rejected.iter().map(|r| r.1.clone()).collect(),
            });
        }
        let outcomes: Vec<Result<AttemptOutcome>> = (next..end)
            .into_par_iter()
            .map(|a| train_member(bundle, pool, training, spec, a))
            .collect();
        for (a, outcome) in (next..end).zip(outcomes) {
            stats.attempts += 1;
            match outcome? {
                AttemptOutcome::Accepted(r) => survivors.push(*r),
                AttemptOutcome::Rejected { label, accuracy } => {
                    log::debug!("{} attempt {a} ({label}) rejected at accuracy {accuracy:.3}", spec.role);
                    stats.rejected.push((a, format!("{label} acc={accuracy:.3}")));
                }
                AttemptOutcome::Diverged { label, reason } => {
                    log::debug!("{} attempt {a} ({label}) diverged: {reason}", spec.role);
                    stats.rejected.push((a, format!("{label} diverged")));
                }
            }
        }
        next = end;
    }
    Ok((survivors, stats))
}
