//! `pncb`: design phase-noise-aware SCMA codebooks, score them and simulate
//! their error rates.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 schema
//! error, 4 enumeration budget refused.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::OperatingPoint;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Schema(String),
    Budget(String),
    Io(String),
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Budget(m) => write!(f, "budget refusal: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<scma_pn::Error> for CliError {
    fn from(e: scma_pn::Error) -> Self {
        match e {
            scma_pn::Error::Schema(_) => CliError::Schema(e.to_string()),
            scma_pn::Error::BudgetRefusal { .. } => CliError::Budget(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pncb", version, about = "Phase-noise-aware SCMA codebook toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed given in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (or file, for commands that write a single table).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a codebook design and write its artifacts.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Score codebook files at one or more operating points.
    Metrics {
        /// Codebook JSON files.
        #[arg(required = true)]
        codebooks: Vec<PathBuf>,
        /// Operating point `SIGMA_P2@EBN0_DB`; may be repeated.
        #[arg(long = "point")]
        points: Vec<OperatingPoint>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a BER sweep over codebook files with shared channel seeds.
    Simulate {
        #[arg(required = true)]
        codebooks: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check codebook files against the schema.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Split a results CSV into one curve file per codebook, detector and
    /// phase-noise level.
    ExportPlotdata {
        results: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn set_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Run(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design { common } => {
            set_workers(common.workers)?;
            commands::design(&common)
        }
        Command::Metrics {
            codebooks,
            points,
            common,
        } => {
            set_workers(common.workers)?;
            commands::metrics(&codebooks, &points, &common)
        }
        Command::Simulate { codebooks, common } => {
            set_workers(common.workers)?;
            commands::simulate(&codebooks, &common)
        }
        Command::Validate { files } => commands::validate(&files),
        Command::ExportPlotdata { results, common } => commands::export_plotdata(&results, &common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
