//! Experiment configuration, the stage graph and its resumable runner.

mod config;
mod manifest;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{
    AdaptiveConfig, AttackConfig, DefenseConfig, DownstreamConfig, ExperimentConfig, PartitionConfig, PlotConfig,
    PopulationConfig, QueryConfig, DEFAULT_CONFIG,
};
pub use manifest::{hash_tree, manifest_path, read_manifest, write_manifest, Manifest};
pub use stages::{plot_path, read_csv, slug};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenData,
    TrainShadows,
    RenderPlots,
    Defend,
    TrainAttack,
    Evaluate,
    Adaptive,
    QueryBaseline,
    Downstream,
    Report,
}

impl Stage {
    /// Every stage in execution order.
    pub const ALL: [Stage; 10] = [
        Stage::GenData,
        Stage::TrainShadows,
        Stage::RenderPlots,
        Stage::Defend,
        Stage::TrainAttack,
        Stage::Evaluate,
        Stage::Adaptive,
        Stage::QueryBaseline,
        Stage::Downstream,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainShadows => "train-shadows",
            Stage::RenderPlots => "render-plots",
            Stage::Defend => "defend",
            Stage::TrainAttack => "train-attack",
            Stage::Evaluate => "evaluate",
            Stage::Adaptive => "adaptive",
            Stage::QueryBaseline => "query-baseline",
            Stage::Downstream => "downstream",
            Stage::Report => "report",
        }
    }

    fn index(self) -> u64 {
        Stage::ALL.iter().position(|&s| s == self).expect("listed") as u64
    }

    /// Directories (relative to the run directory) this stage owns.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::GenData => &["data"],
            Stage::TrainShadows => &["models"],
            Stage::RenderPlots => &["plots/original"],
            Stage::Defend => &["plots/defended", "metrics/utility"],
            Stage::TrainAttack => &["attack"],
            Stage::Evaluate => &["metrics/evaluate"],
            Stage::Adaptive => &["metrics/adaptive"],
            Stage::QueryBaseline => &["metrics/query"],
            Stage::Downstream => &["metrics/downstream"],
            Stage::Report => &["metrics/report"],
        }
    }

    /// Stages whose outputs this one reads.
    pub fn dependencies(self, config: &ExperimentConfig) -> Vec<Stage> {
        use Stage::*;
        match self {
            GenData => vec![],
            TrainShadows => vec![GenData],
            RenderPlots => vec![GenData, TrainShadows],
            Defend => vec![GenData, TrainShadows, RenderPlots],
            TrainAttack => vec![TrainShadows, RenderPlots],
            Evaluate => vec![TrainShadows, RenderPlots, Defend, TrainAttack],
            Adaptive => vec![TrainShadows, RenderPlots, Defend],
            QueryBaseline => vec![GenData, TrainShadows],
            Downstream => vec![GenData, TrainShadows, Evaluate],
            Report => {
                let mut d = vec![Defend, Evaluate];
                d.extend([Adaptive, QueryBaseline, Downstream].into_iter().filter(|s| s.enabled(config)));
                d
            }
        }
    }

    pub fn enabled(self, config: &ExperimentConfig) -> bool {
        match self {
            Stage::Adaptive => config.adaptive.enabled,
            Stage::QueryBaseline => config.query.enabled,
            Stage::Downstream => config.downstream.enabled,
            _ => true,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// What happened when a stage was requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    /// Human-readable work items, such as `trained shadow/<id>`.
    pub work: Vec<String>,
}

/// Runs stages for one configuration inside `output_dir/<config hash>`.
pub struct Runner {
    config: ExperimentConfig,
    root: PathBuf,
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let root = config.run_dir();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&config)?).map_err(|e| Error::io(&path, e))?;
        Ok(Self { config, root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        seed::derive(self.config.seed, &[100 + stage.index()])
    }

    /// Runs every enabled stage in order.
    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        let mut reports = Vec::new();
        for stage in Stage::ALL.into_iter().filter(|s| s.enabled(&self.config)) {
            reports.push(self.run_single(stage)?);
        }
        Ok(reports)
    }

    /// Runs `stage` after bringing its dependencies up to date.
    pub fn run(&self, stage: Stage) -> Result<Vec<StageReport>> {
        let mut needed = vec![stage];
        let mut i = 0;
        while i < needed.len() {
            for d in needed[i].dependencies(&self.config) {
                if !needed.contains(&d) {
                    needed.push(d);
                }
            }
            i += 1;
        }
        needed.sort();
        needed.into_iter().map(|s| self.run_single(s)).collect()
    }

    /// Digest over the manifests of `stage`'s dependencies.
    fn inputs(&self, stage: Stage) -> Result<String> {
        let mut text = String::new();
        for d in stage.dependencies(&self.config) {
            let m = read_manifest(&self.root, d.name())?.ok_or_else(|| {
                Error::InvalidArgument(format!("{stage} needs {d}, which has not run"))
            })?;
            text.push_str(&format!("{}={}\n", d.name(), m.digest()));
        }
        Ok(seed::hash_hex(text.as_bytes()))
    }

    /// Whether `stage`'s recorded outputs are current.
    pub fn is_current(&self, stage: Stage) -> Result<bool> {
        let Some(m) = read_manifest(&self.root, stage.name())? else {
            return Ok(false);
        };
        Ok(m.config_hash == self.config.hash()
            && m.stage_seed == self.stage_seed(stage)
            && m.inputs == self.inputs(stage)?
            && m.mismatches(&self.root).is_empty())
    }

    fn run_single(&self, stage: Stage) -> Result<StageReport> {
        if self.is_current(stage)? {
            log::info!("{stage}: up to date");
            return Ok(StageReport {
                stage,
                skipped: true,
                work: Vec::new(),
            });
        }
        let inputs = self.inputs(stage)?;
        let path = manifest_path(&self.root, stage.name());
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        // Shadow training reuses whatever valid models are already on disk.
        if stage != Stage::TrainShadows {
            for dir in stage.outputs() {
                let d = self.root.join(dir);
                if d.exists() {
                    fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                }
            }
        }
        log::info!("{stage}: running");
        let mut ctx = stages::Ctx {
            config: &self.config,
            root: &self.root,
            stage_seed: self.stage_seed(stage),
            work: Vec::new(),
        };
        match stage {
            Stage::GenData => stages::gen_data(&mut ctx),
            Stage::TrainShadows => stages::train_shadows(&mut ctx),
            Stage::RenderPlots => stages::render_plots(&mut ctx),
            Stage::Defend => stages::defend(&mut ctx),
            Stage::TrainAttack => stages::train_attack(&mut ctx),
            Stage::Evaluate => stages::evaluate_stage(&mut ctx),
            Stage::Adaptive => stages::adaptive(&mut ctx),
            Stage::QueryBaseline => stages::query(&mut ctx),
            Stage::Downstream => stages::downstream(&mut ctx),
            Stage::Report => stages::report(&mut ctx),
        }?;
        let mut files = std::collections::BTreeMap::new();
        for dir in stage.outputs() {
            files.extend(hash_tree(&self.root, dir)?);
        }
        write_manifest(
            &self.root,
            &Manifest {
                stage: stage.name().into(),
                config_hash: self.config.hash(),
                stage_seed: self.stage_seed(stage),
                inputs,
                files,
            },
        )?;
        for w in &ctx.work {
            log::info!("{stage}: {w}");
        }
        Ok(StageReport {
            stage,
            skipped: false,
            work: ctx.work,
        })
    }
}
