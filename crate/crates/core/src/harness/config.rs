use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::AdvConfig;
use crate::attack::{AttackModelConfig, PlotKind, QueryAttackConfig, Setting};
use crate::defense::{LossDefense, TsneDefense};
use crate::error::{Error, Result};
use crate::render::{LossPlotConfig, RenderConfig};
use crate::seed;
use crate::shadow::{HyperparamPool, InferenceTarget, MemberTraining, SyntheticSpec};
use crate::tsne::TsneConfig;

/// The bundled default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    /// Shares of shadow-train, shadow-test, target-train, target-test.
    pub fractions: [f64; 4],
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { fractions: [0.25; 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub shadow_count: usize,
    pub target_count: usize,
    /// Minimum test accuracy a trained model needs to be kept.
    pub filter_threshold: f64,
    /// Replacement attempts allowed, as a multiple of the population size.
    pub retry_factor: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            shadow_count: 60,
            target_count: 15,
            filter_threshold: 0.5,
            retry_factor: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub kinds: Vec<PlotKind>,
    /// Test-split samples embedded per t-SNE plot.
    pub tsne_samples: usize,
    /// t-SNE plots per shadow model (different samples and t-SNE seeds).
    pub shadow_variants: usize,
    /// t-SNE plots per target model.
    pub target_variants: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            kinds: PlotKind::ALL.to_vec(),
            tsne_samples: 300,
            shadow_variants: 3,
            target_variants: 3,
        }
    }
}

impl PlotConfig {
    pub fn variants(&self, kind: PlotKind, role: crate::shadow::Role) -> usize {
        match (kind.is_loss(), role) {
            (true, _) => 1,
            (false, crate::shadow::Role::Shadow) => self.shadow_variants,
            (false, crate::shadow::Role::Target) => self.target_variants,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub targets: Vec<InferenceTarget>,
    pub settings: Vec<Setting>,
    pub model: AttackModelConfig,
    /// Independent attack trainings per condition.
    pub repetitions: usize,
    /// Also train label-shuffled control models.
    pub shuffled_control: bool,
    /// Neighbors for the kNN utility of defended t-SNE plots.
    pub knn_k: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            targets: vec![InferenceTarget::Optimizer],
            settings: vec![Setting::Mixed],
            model: AttackModelConfig::default(),
            repetitions: 10,
            shuffled_control: true,
            knn_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DefenseConfig {
    pub tsne: Vec<TsneDefense>,
    pub loss: Vec<LossDefense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub enabled: bool,
    /// Tags of the defenses whose plots join the adaptive training set;
    /// empty means every configured defense.
    pub defenses: Vec<String>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            defenses: Vec::new(),
        }
    }
}

impl AdaptiveConfig {
    pub fn includes(&self, tag: &str) -> bool {
        self.enabled && (self.defenses.is_empty() || self.defenses.iter().any(|d| d == tag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub attack: QueryAttackConfig,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            attack: QueryAttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub adv: AdvConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            adv: AdvConfig::default(),
        }
    }
}

/// Everything one experiment run needs. Seeds inside sections are ignored:
/// every random stream derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub dataset: SyntheticSpec,
    pub partition: PartitionConfig,
    pub pool: HyperparamPool,
    pub training: MemberTraining,
    pub population: PopulationConfig,
    pub tsne: TsneConfig,
    pub plots: PlotConfig,
    pub render: RenderConfig,
    pub loss_plot: LossPlotConfig,
    pub attack: AttackConfig,
    pub defenses: DefenseConfig,
    pub adaptive: AdaptiveConfig,
    pub query: QueryConfig,
    pub downstream: DownstreamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            jobs: 0,
            dataset: SyntheticSpec::default(),
            partition: PartitionConfig::default(),
            pool: HyperparamPool::default(),
            training: MemberTraining::default(),
            population: PopulationConfig::default(),
            tsne: TsneConfig::default(),
            plots: PlotConfig::default(),
            render: RenderConfig::default(),
            loss_plot: LossPlotConfig::default(),
            attack: AttackConfig::default(),
            defenses: DefenseConfig::default(),
            adaptive: AdaptiveConfig::default(),
            query: QueryConfig::default(),
            downstream: DownstreamConfig::default(),
        }
    }
}

/// Dotted paths of keys in `user` that `reference` does not have.
fn unknown_keys(user: &serde_json::Value, reference: &serde_json::Value, path: &str, out: &mut Vec<String>) {
    if let (Some(u), Some(r)) = (user.as_object(), reference.as_object()) {
        for (k, v) in u {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match r.get(k) {
                Some(rv) => unknown_keys(v, rv, &p, out),
                None => out.push(format!("{p}: unknown field")),
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`. Unknown fields
    /// and invalid values are all reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("JSON: {e}")]))?
        } else {
            let t: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("TOML: {e}")]))?;
            serde_json::to_value(t)?
        };
        let mut problems = Vec::new();
        let reference = serde_json::to_value(ExperimentConfig::default())?;
        unknown_keys(&value, &reference, "", &mut problems);
        let config: ExperimentConfig = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string());
                return Err(Error::Config(problems));
            }
        };
        problems.extend(config.problems());
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn bundled_default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Every invalid field, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut section = |name: &str, r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Config(list)) => p.extend(list),
            Err(e) => p.push(format!("{name}: {e}")),
        };
        section("dataset", self.dataset.validate());
        section("pool", self.pool.validate());
        section("render", self.render.validate());
        section("loss_plot", self.loss_plot.validate());
        section("attack.model", self.attack.model.validate());
        if self.downstream.enabled {
            section("downstream", self.downstream.adv.validate());
        }
        for d in &self.defenses.tsne {
            section(&format!("defenses.tsne {}", d.tag()), d.validate());
        }
        for d in &self.defenses.loss {
            section(&format!("defenses.loss {}", d.tag()), d.validate());
        }

        let f = self.partition.fractions;
        if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            p.push(format!("partition.fractions {f:?} must be positive and sum to 1"));
        }
        let pop = &self.population;
        if pop.shadow_count == 0 || pop.target_count == 0 {
            p.push("population.shadow_count and target_count must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&pop.filter_threshold) {
            p.push(format!("population.filter_threshold {} must be in [0, 1]", pop.filter_threshold));
        }
        let tr = &self.training;
        if tr.hidden_width == 0 || tr.epochs == 0 {
            p.push("training.hidden_width and epochs must be >= 1".into());
        }
        if !(tr.adam_learning_rate > 0.0) || !(tr.sgd_learning_rate > 0.0) {
            p.push("training learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&tr.sgd_momentum) {
            p.push(format!("training.sgd_momentum {} must be in [0, 1)", tr.sgd_momentum));
        }
        if tr.train_samples == Some(0) {
            p.push("training.train_samples must be >= 1 when set".into());
        }

        let plots = &self.plots;
        if plots.kinds.is_empty() {
            p.push("plots.kinds is empty".into());
        }
        if plots.shadow_variants == 0 || plots.target_variants == 0 {
            p.push("plots.shadow_variants and target_variants must be >= 1".into());
        }
        let smallest_test = self.dataset.classes as f64 * self.dataset.samples_per_class as f64 * f[1].min(f[3]);
        if plots.tsne_samples < 4 || plots.tsne_samples as f64 > smallest_test.floor() {
            p.push(format!(
                "plots.tsne_samples {} must be in 4..={} (test split size)",
                plots.tsne_samples,
                smallest_test.floor()
            ));
        }
        if let Err(e) = self.tsne.validate(plots.tsne_samples) {
            p.push(format!("tsne: {e}"));
        }

        let at = &self.attack;
        if at.targets.is_empty() {
            p.push("attack.targets is empty".into());
        }
        if at.settings.is_empty() {
            p.push("attack.settings is empty".into());
        }
        if at.repetitions == 0 {
            p.push("attack.repetitions must be >= 1".into());
        }
        if at.knn_k == 0 {
            p.push("attack.knn_k must be >= 1".into());
        }
        for &t in &at.targets {
            if self.pool.candidate_count(t) < 2 {
                p.push(format!("attack.targets: pool.{t} needs at least 2 candidates"));
            }
        }
        for s in &at.settings {
            if let Setting::Fixed(fixed) = s {
                for t in InferenceTarget::ALL {
                    if let Some(v) = fixed.pinned(t) {
                        if !self.pool.candidate_names(t).contains(&v) {
                            p.push(format!("attack.settings {}: {t}={v} is not in pool.{t}", s.tag()));
                        }
                    }
                }
            }
        }
        let tags: Vec<String> = self
            .defenses
            .tsne
            .iter()
            .map(|d| d.tag())
            .chain(self.defenses.loss.iter().map(|d| d.tag()))
            .collect();
        for (i, t) in tags.iter().enumerate() {
            if tags[..i].contains(t) {
                p.push(format!("defenses: duplicate defense {t}"));
            }
        }
        for t in &self.adaptive.defenses {
            if !tags.contains(t) {
                p.push(format!("adaptive.defenses: {t} is not a configured defense"));
            }
        }
        if self.query.enabled {
            let q = &self.query.attack;
            let shadow_test = self.dataset.classes as f64 * self.dataset.samples_per_class as f64 * f[1];
            if q.query_count == 0 || q.query_count as f64 > shadow_test.floor() {
                p.push(format!("query.query_count {} must be in 1..={}", q.query_count, shadow_test.floor()));
            }
            if q.epochs == 0 || q.batch_size == 0 || !(q.learning_rate > 0.0) || q.hidden.contains(&0) {
                p.push("query: epochs, batch_size, hidden widths and learning_rate must be positive".into());
            }
        }
        p
    }

    /// Hash of everything that affects results (not `output_dir` or `jobs`).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.jobs = 0;
        let text = serde_json::to_string(&c).expect("config serializes");
        seed::hash_hex(text.as_bytes())[..12].to_string()
    }

    /// Directory holding this configuration's artifacts.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.hash())
    }
}
