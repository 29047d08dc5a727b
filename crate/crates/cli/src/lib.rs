//! Command-line front end: config parsing, sweeps and result files.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] nisqrc::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON record: `{"error":{"kind":...,"message":...}}`.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Record<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Record {
            error: Body {
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("string fields always serialize")
    }
}

#[derive(Debug, Parser)]
#[command(name = "nisqrc", version, about = "Measured-and-reset quantum reservoir experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Master seed, overriding the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Null-input spectra and memory times (spectrum.json, nm_sweep.csv).
    Spectrum,
    /// Volterra kernels up to second order (kernels.csv).
    Kernels,
    /// Channel equalization with baselines (results.csv, model.json).
    Ce,
    /// Jacobian rank with singular values (jacobian.json, jacobian_sv.csv).
    Jacobian,
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs one subcommand and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &cli.out),
        Command::Kernels => commands::kernels(&cfg, &cli.out),
        Command::Ce => commands::ce(&cfg, &cli.out),
        Command::Jacobian => commands::jacobian(&cfg, &cli.out),
    })
}
