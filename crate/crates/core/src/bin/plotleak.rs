use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plotleak::error::{Error, Result};
use plotleak::harness::{ExperimentConfig, Runner, Stage};

/// Hyperparameter inference from published t-SNE and loss plots.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// TOML or JSON experiment config; the bundled default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root; runs land in `<out>/<config hash>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate and partition the synthetic dataset.
    GenData,
    /// Train the shadow and target model populations.
    TrainShadows,
    /// Render t-SNE and loss plots for every model.
    RenderPlots,
    /// Apply the configured defenses and measure their utility cost.
    Defend,
    /// Train the plot classifiers on shadow plots.
    TrainAttack,
    /// Score the classifiers on target plots, plus the shuffled-label control.
    Evaluate,
    /// Retrain on defended shadow plots and rescore.
    Adaptive,
    /// Query-based inference baseline on model outputs.
    QueryBaseline,
    /// FGSM transfer from inferred, random and white-box surrogates.
    Downstream,
    /// Collect the metric tables into a summary.
    Report,
    /// Every enabled stage in order.
    All,
    /// Print the resolved configuration as TOML.
    PrintConfig,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::GenData => Stage::GenData,
            Command::TrainShadows => Stage::TrainShadows,
            Command::RenderPlots => Stage::RenderPlots,
            Command::Defend => Stage::Defend,
            Command::TrainAttack => Stage::TrainAttack,
            Command::Evaluate => Stage::Evaluate,
            Command::Adaptive => Stage::Adaptive,
            Command::QueryBaseline => Stage::QueryBaseline,
            Command::Downstream => Stage::Downstream,
            Command::Report => Stage::Report,
            Command::All | Command::PrintConfig => return None,
        })
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::bundled_default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    if let Some(o) = &cli.out {
        config.output_dir = o.clone();
    }
    config.validate()?;
    Ok(config)
}

/// TOML has no null; unset optional fields are simply left out.
fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|_, x| !x.is_null());
            map.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    if let Command::PrintConfig = cli.command {
        let mut value = serde_json::to_value(&config)?;
        strip_nulls(&mut value);
        let text = toml::to_string_pretty(&value).map_err(|e| Error::Config(vec![e.to_string()]))?;
        print!("{text}");
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runner = Runner::new(config)?;
    let reports = match cli.command.stage() {
        Some(stage) => runner.run(stage)?,
        None => runner.run_all()?,
    };
    for r in &reports {
        let status = if r.skipped { "skipped (up to date)" } else { "ran" };
        println!("{:<15} {status}", r.stage.name());
        for w in &r.work {
            println!("    {w}");
        }
    }
    println!("artifacts: {}", runner.root().display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(problems)) => {
            eprintln!("invalid configuration:");
            for p in problems {
                eprintln!("  - {p}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
