//! Command-line front end: ingestion, fitting, testing, simulation,
//! bootstrap and the replication harness.

pub mod commands;
pub mod config;
pub mod io;

use clap::{Parser, Subcommand};

pub use config::{Flags, ModelId, RunConfig};
pub use io::{load_csv, Loaded};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error(transparent)]
    Core(#[from] gsm_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad configuration or input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Ingest(_) => 2,
            CliError::Core(gsm_core::Error::InvalidInput(_)) => 2,
            CliError::Core(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsm", version, about = "Score matching estimation and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and report estimates with sandwich standard errors.
    Fit(Flags),
    /// Wald and change-in-SM tests of a zero parameter block.
    Test(Flags),
    /// Simulate a dataset in the ingestion schema.
    Simulate(Flags),
    /// Parametric bootstrap percentile intervals.
    Bootstrap(Flags),
    /// Run a replication study.
    Replicate(Flags),
}

impl Command {
    fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Command::Fit(f) => ("fit", f),
            Command::Test(f) => ("test", f),
            Command::Simulate(f) => ("simulate", f),
            Command::Bootstrap(f) => ("bootstrap", f),
            Command::Replicate(f) => ("replicate", f),
        }
    }
}

/// Runs one command and returns the text printed to standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let (name, flags) = cli.command.parts();
    let cfg = RunConfig::resolve(name, flags)?;
    match name {
        "fit" => commands::cmd_fit(&cfg),
        "test" => commands::cmd_test(&cfg),
        "simulate" => commands::cmd_simulate(&cfg),
        "bootstrap" => commands::cmd_bootstrap(&cfg),
        _ => commands::cmd_replicate(&cfg),
    }
}
