//! `cvgl`: offline stages (world, dataset, synth, train) and the online
//! evaluation, each a subcommand sharing one run directory.

mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "cvgl", version, about = "Cross-view place classification pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). Defaults to <out>/config.toml, then built-ins.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory shared by all stages.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Virtual viewpoints per class.
    #[arg(long = "n-synth", global = true)]
    n_synth: Option<usize>,
    /// Comma-separated N values for `report`, e.g. 0,5,10,20.
    #[arg(long, global = true, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic world and its rendered frame pool.
    World {
        #[command(subcommand)]
        action: WorldAction,
    },
    /// Place classes and the training/test split.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Real and synthesized training graphs.
    Synth,
    /// Train the graph network on the stored graphs.
    Train,
    /// Rank every test frame (online path only).
    Eval,
    /// Full in-memory benchmark with all methods and the N sweep.
    Report,
}

#[derive(Subcommand)]
enum WorldAction {
    Gen,
}

#[derive(Subcommand)]
enum DatasetAction {
    Build,
}

fn resolve_config(global: &Global, out: &Path) -> Result<PipelineConfig> {
    let mut config = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None if out.join(stages::CONFIG_FILE).exists() => {
            PipelineConfig::load(&out.join(stages::CONFIG_FILE))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(n) = global.n_synth {
        config.synthesis.n_synth = n;
    }
    if let Some(sweep) = &global.sweep {
        config.sweep = sweep.clone();
    }
    Ok(config)
}

/// `CVGL_THREADS` caps the worker pool; unset means one per core.
fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("CVGL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CVGL_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let out = stages::run_dir(cli.global.out.clone());
    let config = resolve_config(&cli.global, &out)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::World { action: WorldAction::Gen } => stages::world_gen(&config, &out),
        Command::Dataset { action: DatasetAction::Build } => stages::dataset_build(&config, &out),
        Command::Synth => stages::synth(&config, &out),
        Command::Train => stages::train(&config, &out),
        Command::Eval => stages::eval(&config, &out).map(|_| ()),
        Command::Report => stages::report(&config, &out, &config.sweep),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
