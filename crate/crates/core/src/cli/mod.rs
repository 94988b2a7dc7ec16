//! The `ctool` command line.
//!
//! ```text
//! ctool run [CONFIG] [--experiment X] [--seed N] [--alphas a,b,c]
//!           [--output-dir P] [--threads N] ...
//! ```
//!
//! Writes `<experiment>.csv`, `plot_*.csv` and `manifest.json` into the
//! output directory. Exit status is 0 on success, 2 for configuration errors
//! and 1 for I/O or runtime failures.

pub mod config;
pub mod output;
pub mod runner;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use crate::synthetic::NoiseKind;
use config::{Experiment, ExperimentConfig, RawConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Run(#[from] crate::error::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctool", version, about = "Multi-target conformal calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its results.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config, or JSON config / manifest from an earlier run.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Miscoverage levels α, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "coverages")]
    pub alphas: Option<Vec<f64>>,
    /// Target coverage levels 1 − α, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub coverages: Option<Vec<f64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "CTOOL_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub noise: Option<String>,
    /// Tuning-set size; replaces the sweep list for `ntune_sweep`.
    #[arg(long)]
    pub ntune: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Calibrators as `method[:score]`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    if let Some(e) = &args.experiment {
        raw.experiment = Some(e.parse()?);
    }
    if let Some(s) = args.seed {
        raw.seed = Some(s);
    }
    if let Some(a) = &args.alphas {
        raw.alphas = Some(a.clone());
    }
    if let Some(c) = &args.coverages {
        raw.alphas = Some(c.iter().map(|c| 1.0 - c).collect());
    }
    if let Some(d) = &args.output_dir {
        raw.output_dir = Some(d.clone());
    }
    if let Some(n) = &args.noise {
        raw.noise = Some(n.parse::<NoiseKind>().map_err(|e| CliError::Config(e.to_string()))?);
    }
    if let Some(n) = args.ntune {
        raw.n_tune = Some(n);
        if raw.experiment == Some(Experiment::NtuneSweep) {
            raw.tune_sizes = Some(vec![n]);
        }
    }
    if let Some(t) = args.trials {
        raw.trials = Some(t);
    }
    if let Some(d) = args.draws {
        raw.draws = Some(d);
    }
    if let Some(m) = &args.methods {
        raw.methods = Some(m.clone());
    }
    raw.resolve()
}

/// Runs an experiment and writes its outputs; returns the CSV path.
pub fn run(args: &RunArgs) -> Result<PathBuf, CliError> {
    let cfg = resolve_config(args)?;
    let start = Instant::now();
    let rows = match args.threads {
        Some(0) => return Err(CliError::Config("`--threads` must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(|| runner::run_experiment(&cfg))?,
        None => runner::run_experiment(&cfg)?,
    };
    output::write_all(&cfg, &rows, start.elapsed().as_secs_f64())
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
    }
}
