use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationKind, OptimizerKind};

/// A hyperparameter the attack tries to recover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceTarget {
    Activation,
    HiddenLayers,
    Optimizer,
    BatchSize,
}

impl InferenceTarget {
    pub const ALL: [InferenceTarget; 4] = [
        Self::Activation,
        Self::HiddenLayers,
        Self::Optimizer,
        Self::BatchSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Activation => "activation",
            Self::HiddenLayers => "hidden_layers",
            Self::Optimizer => "optimizer",
            Self::BatchSize => "batch_size",
        }
    }
}

impl fmt::Display for InferenceTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InferenceTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown inference target {s:?}")))
    }
}

/// Candidate values for every inference target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPool {
    pub activation: Vec<ActivationKind>,
    pub hidden_layers: Vec<usize>,
    pub optimizer: Vec<OptimizerKind>,
    pub batch_size: Vec<usize>,
}

impl Default for HyperparamPool {
    fn default() -> Self {
        Self {
            activation: ActivationKind::ALL.to_vec(),
            hidden_layers: vec![2, 3, 4],
            optimizer: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            batch_size: vec![16, 32, 64, 128],
        }
    }
}

impl HyperparamPool {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for t in InferenceTarget::ALL {
            if self.candidate_count(t) == 0 {
                problems.push(format!("pool.{t} has no candidates"));
            }
        }
        if self.hidden_layers.contains(&0) {
            problems.push("pool.hidden_layers must be >= 1".into());
        }
        if self.batch_size.contains(&0) {
            problems.push("pool.batch_size must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn candidate_count(&self, target: InferenceTarget) -> usize {
        match target {
            InferenceTarget::Activation => self.activation.len(),
            InferenceTarget::HiddenLayers => self.hidden_layers.len(),
            InferenceTarget::Optimizer => self.optimizer.len(),
            InferenceTarget::BatchSize => self.batch_size.len(),
        }
    }

    pub fn candidate_names(&self, target: InferenceTarget) -> Vec<String> {
        match target {
            InferenceTarget::Activation => self.activation.iter().map(ToString::to_string).collect(),
            InferenceTarget::HiddenLayers => self.hidden_layers.iter().map(ToString::to_string).collect(),
            InferenceTarget::Optimizer => self.optimizer.iter().map(ToString::to_string).collect(),
            InferenceTarget::BatchSize => self.batch_size.iter().map(ToString::to_string).collect(),
        }
    }

    /// Position of the assignment's value for `target` in the candidate list.
    pub fn label_index(&self, assignment: &Assignment, target: InferenceTarget) -> Option<usize> {
        match target {
            InferenceTarget::Activation => self.activation.iter().position(|&v| v == assignment.activation),
            InferenceTarget::HiddenLayers => {
                self.hidden_layers.iter().position(|&v| v == assignment.hidden_layers)
            }
            InferenceTarget::Optimizer => self.optimizer.iter().position(|&v| v == assignment.optimizer),
            InferenceTarget::BatchSize => self.batch_size.iter().position(|&v| v == assignment.batch_size),
        }
    }

    pub fn contains(&self, a: &Assignment) -> bool {
        InferenceTarget::ALL
            .into_iter()
            .all(|t| self.label_index(a, t).is_some())
    }

    /// Sets `target` on `assignment` to candidate `index`.
    pub fn assign(&self, assignment: &mut Assignment, target: InferenceTarget, index: usize) {
        match target {
            InferenceTarget::Activation => assignment.activation = self.activation[index],
            InferenceTarget::HiddenLayers => assignment.hidden_layers = self.hidden_layers[index],
            InferenceTarget::Optimizer => assignment.optimizer = self.optimizer[index],
            InferenceTarget::BatchSize => assignment.batch_size = self.batch_size[index],
        }
    }
}

/// One full hyperparameter assignment: the ground-truth label of a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub activation: ActivationKind,
    pub hidden_layers: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
}

impl Assignment {
    pub fn value(&self, target: InferenceTarget) -> String {
        match target {
            InferenceTarget::Activation => self.activation.to_string(),
            InferenceTarget::HiddenLayers => self.hidden_layers.to_string(),
            InferenceTarget::Optimizer => self.optimizer.to_string(),
            InferenceTarget::BatchSize => self.batch_size.to_string(),
        }
    }

    /// Number of targets on which two assignments agree.
    pub fn agreement(&self, other: &Assignment) -> usize {
        InferenceTarget::ALL
            .into_iter()
            .filter(|&t| self.value(t) == other.value(t))
            .count()
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        InferenceTarget::ALL
            .into_iter()
            .map(|t| format!("{t}={}\n", self.value(t)))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut activation = None;
        let mut hidden_layers = None;
        let mut optimizer = None;
        let mut batch_size = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad label line {line:?}")))?;
            let bad = || Error::InvalidArgument(format!("bad label value {line:?}"));
            match k.trim().parse::<InferenceTarget>()? {
                InferenceTarget::Activation => activation = Some(v.trim().parse()?),
                InferenceTarget::HiddenLayers => hidden_layers = Some(v.trim().parse().map_err(|_| bad())?),
                InferenceTarget::Optimizer => optimizer = Some(v.trim().parse()?),
                InferenceTarget::BatchSize => batch_size = Some(v.trim().parse().map_err(|_| bad())?),
            }
        }
        let missing = |k: &str| Error::InvalidArgument(format!("label missing {k}"));
        Ok(Self {
            activation: activation.ok_or_else(|| missing("activation"))?,
            hidden_layers: hidden_layers.ok_or_else(|| missing("hidden_layers"))?,
            optimizer: optimizer.ok_or_else(|| missing("optimizer"))?,
            batch_size: batch_size.ok_or_else(|| missing("batch_size"))?,
        })
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}L/{}/bs{}",
            self.activation, self.hidden_layers, self.optimizer, self.batch_size
        )
    }
}

/// Draws every field independently and uniformly from its candidates.
pub fn sample_config<R: Rng + ?Sized>(pool: &HyperparamPool, rng: &mut R) -> Assignment {
    Assignment {
        activation: pool.activation[rng.random_range(0..pool.activation.len())],
        hidden_layers: pool.hidden_layers[rng.random_range(0..pool.hidden_layers.len())],
        optimizer: pool.optimizer[rng.random_range(0..pool.optimizer.len())],
        batch_size: pool.batch_size[rng.random_range(0..pool.batch_size.len())],
    }
}

/// Partial assignment pinning some of the non-target hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedAssignment {
    pub activation: Option<ActivationKind>,
    pub hidden_layers: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub batch_size: Option<usize>,
}

impl FixedAssignment {
    /// Whether `a` matches every pinned field other than `target`.
    pub fn matches(&self, a: &Assignment, target: InferenceTarget) -> bool {
        let ok = |t: InferenceTarget, pinned: bool, eq: bool| t == target || !pinned || eq;
        ok(
            InferenceTarget::Activation,
            self.activation.is_some(),
            self.activation == Some(a.activation),
        ) && ok(
            InferenceTarget::HiddenLayers,
            self.hidden_layers.is_some(),
            self.hidden_layers == Some(a.hidden_layers),
        ) && ok(
            InferenceTarget::Optimizer,
            self.optimizer.is_some(),
            self.optimizer == Some(a.optimizer),
        ) && ok(
            InferenceTarget::BatchSize,
            self.batch_size.is_some(),
            self.batch_size == Some(a.batch_size),
        )
    }

    /// The pinned value for `target`, formatted like `Assignment::value`.
    pub fn pinned(&self, target: InferenceTarget) -> Option<String> {
        match target {
            InferenceTarget::Activation => self.activation.map(|v| v.to_string()),
            InferenceTarget::HiddenLayers => self.hidden_layers.map(|v| v.to_string()),
            InferenceTarget::Optimizer => self.optimizer.map(|v| v.to_string()),
            InferenceTarget::BatchSize => self.batch_size.map(|v| v.to_string()),
        }
    }

    /// Pinned fields `a` agrees with.
    pub fn agreement(&self, a: &Assignment) -> usize {
        InferenceTarget::ALL
            .into_iter()
            .filter(|&t| self.pinned(t).is_some_and(|v| v == a.value(t)))
            .count()
    }

    pub fn pinned_count(&self) -> usize {
        InferenceTarget::ALL
            .into_iter()
            .filter(|&t| self.pinned(t).is_some())
            .count()
    }

    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.activation {
            parts.push(format!("activation={v}"));
        }
        if let Some(v) = self.hidden_layers {
            parts.push(format!("hidden_layers={v}"));
        }
        if let Some(v) = self.optimizer {
            parts.push(format!("optimizer={v}"));
        }
        if let Some(v) = self.batch_size {
            parts.push(format!("batch_size={v}"));
        }
        parts.join(";")
    }
}
