use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::nn::{argmax, ActivationKind, FeedforwardNet, LabeledSet, Matrix, OptimizerKind, TrainConfig, Trainer};
use crate::shadow::{sample_rows, HyperparamPool, InferenceTarget, ModelRecord, Role};

/// What the black-box query interface returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Full class-probability vectors.
    Posterior,
    /// One-hot predicted labels.
    LabelOnly,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Posterior => "posterior",
            Self::LabelOnly => "label_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryAttackConfig {
    /// Query-set size; features have `query_count × class_count` entries.
    pub query_count: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for QueryAttackConfig {
    fn default() -> Self {
        Self {
            query_count: 100,
            hidden: vec![128, 128],
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

/// The fixed query inputs, drawn once and shared by every model.
pub fn select_query_set(source: &LabeledSet, count: usize, seed: u64) -> Result<Matrix> {
    if count == 0 || count > source.len() {
        return Err(Error::InvalidArgument(format!(
            "query count {count} must be in 1..={}",
            source.len()
        )));
    }
    Ok(source.features.select_rows(&sample_rows(source.len(), count, seed)))
}

/// Concatenated outputs of `net` on the query set, row by row.
pub fn query_features(net: &FeedforwardNet, queries: &Matrix, mode: QueryMode) -> Result<Vec<f64>> {
    let p = net.predict_proba(queries)?;
    Ok(match mode {
        QueryMode::Posterior => p.into_vec(),
        QueryMode::LabelOnly => {
            let k = p.cols();
            let mut out = vec![0.0; p.rows() * k];
            for r in 0..p.rows() {
                out[r * k + argmax(p.row(r))] = 1.0;
            }
            out
        }
    })
}

fn query_set(
    records: &[ModelRecord],
    pool: &HyperparamPool,
    target: InferenceTarget,
    queries: &Matrix,
    mode: QueryMode,
) -> Result<LabeledSet> {
    let rows = records
        .iter()
        .map(|r| query_features(&r.net, queries, mode))
        .collect::<Result<Vec<_>>>()?;
    let labels = records
        .iter()
        .map(|r| {
            pool.label_index(&r.label, target)
                .ok_or_else(|| Error::InvalidArgument(format!("record {} outside the pool", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledSet::new(Matrix::from_rows(&rows)?, labels, pool.candidate_count(target))
}

/// Trains an MLP on shadow models' query outputs and scores it on the
/// target models'.
#[allow(clippy::too_many_arguments)]
pub fn query_baseline(
    shadows: &[ModelRecord],
    targets: &[ModelRecord],
    pool: &HyperparamPool,
    target: InferenceTarget,
    queries: &Matrix,
    mode: QueryMode,
    config: &QueryAttackConfig,
    seed: u64,
) -> Result<(f64, ConfusionMatrix)> {
    if let Some(r) = shadows.iter().find(|r| r.role == Role::Target) {
        return Err(Error::Leakage(format!("target model {} among query-attack training models", r.id)));
    }
    if shadows.is_empty() || targets.is_empty() {
        return Err(Error::InvalidArgument("query baseline needs shadow and target models".into()));
    }
    let train = query_set(shadows, pool, target, queries, mode)?;
    let test = query_set(targets, pool, target, queries, mode)?;
    let k = pool.candidate_count(target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![train.dims()];
    dims.extend(&config.hidden);
    dims.push(k);
    let net = FeedforwardNet::new(&dims, ActivationKind::Relu, &mut rng)?;
    let train_config = TrainConfig {
        batch_size: config.batch_size,
        epochs: config.epochs,
        seed: crate::seed::derive(seed, &[1]),
        optimizer: OptimizerKind::Adam,
        learning_rate: config.learning_rate,
        momentum: 0.0,
    };
    let mut trainer = Trainer::new(net, &train_config, train.len())?;
    for _ in 0..config.epochs {
        trainer.run_epoch(&train)?;
    }
    let predicted = trainer.net().predict(&test.features)?;
    let cm = ConfusionMatrix::from_predictions(k, &test.labels, &predicted)?;
    Ok((cm.accuracy(), cm))
}
