use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod report;

use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] samgog::Error),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Parser)]
#[command(name = "samgog", version, about = "Sampling-based graph-of-graphs experiments")]
struct Cli {
    /// TOML config with dotted keys (alloc.d_bar, encoder.arch, ...)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides train.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the full pipeline for train.runs seeded runs
    Train {
        /// Run the seeded repetitions in parallel
        #[arg(long)]
        parallel: bool,
    },
    /// Edge homophily of sampled GoGs against the average degree
    SweepHomophily {
        /// Comma-separated average degrees; overrides sweep.degrees
        #[arg(long, value_delimiter = ',')]
        degrees: Option<Vec<f64>>,
    },
    /// Run the theory checks and emit a JSON report
    Theory(TheoryArgs),
    /// Generate a class-imbalanced split file
    MakeSplit,
    /// Print dataset statistics
    InspectDataset,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[arg(long)]
    lemma1_trials: Option<usize>,
    #[arg(long)]
    lemma1_n_max: Option<usize>,
    #[arg(long)]
    theorem1_trials: Option<usize>,
    #[arg(long)]
    theorem1_size: Option<usize>,
    /// Comma-separated samples-per-step values for the variance sweep
    #[arg(long, value_delimiter = ',')]
    t_values: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    monotonicity_trials: Option<usize>,
    /// Skip the variance sweep (the slowest check)
    #[arg(long)]
    skip_variance: bool,
    /// Print the JSON report to stdout instead of writing theory_report.json
    #[arg(long)]
    stdout: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out: &Path = &cli.out;
    match cli.command {
        Command::Train { parallel } => {
            cfg.parallel |= parallel;
            commands::train(&cfg, out)
        }
        Command::SweepHomophily { degrees } => {
            if let Some(d) = degrees {
                cfg.sweep.degrees = d;
            }
            commands::sweep_homophily(&cfg, out)
        }
        Command::Theory(a) => {
            let t = &mut cfg.theory;
            t.lemma1_trials = a.lemma1_trials.unwrap_or(t.lemma1_trials);
            t.lemma1_n_max = a.lemma1_n_max.unwrap_or(t.lemma1_n_max);
            t.theorem1_trials = a.theorem1_trials.unwrap_or(t.theorem1_trials);
            t.theorem1_size = a.theorem1_size.unwrap_or(t.theorem1_size);
            t.replicates = a.replicates.unwrap_or(t.replicates);
            t.monotonicity_trials = a.monotonicity_trials.unwrap_or(t.monotonicity_trials);
            if let Some(v) = a.t_values {
                t.t_values = v;
            }
            commands::theory(&cfg, out, !a.skip_variance, a.stdout)
        }
        Command::MakeSplit => commands::make_split(&cfg, out),
        Command::InspectDataset => commands::inspect_dataset(&cfg, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
