//! `ladderskin`: batch experiment runner for the monitored two-leg ladder.
//!
//! Exit codes: 0 success, 2 usage, 3 numerical failure, 4 capacity,
//! 1 I/O.

mod commands;
mod output;
mod params;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ladderskin::Leg;

use crate::params::{CommonArgs, Params};

#[derive(Parser)]
#[command(name = "ladderskin", version, about = "Liouvillian spectra, steady states and quantum trajectories of a monitored two-leg ladder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full single-particle Liouvillian spectrum and steady state.
    Spectrum(CommonArgs),
    /// Liouvillian gap over an N x delta grid with log-log fits.
    GapScan(CommonArgs),
    /// Steady state by linear solve; `--leg` selects a decoupled leg at delta = 0.
    SteadyState {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        leg: Option<Leg>,
    },
    /// Zeroth- or first-order spectrum from the effective Hamiltonian.
    Perturb {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        order: Option<u8>,
    },
    /// Quantum-trajectory ensembles of Gaussian states.
    Trajectories(CommonArgs),
    /// Cross-check against the exact many-body solver on a small ladder.
    OracleCompare(CommonArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ladderskin::Error),
    Io(String),
    Failed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(e) if e.is_capacity() => 4,
            CliError::Core(_) | CliError::Failed(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ladderskin::Error> for CliError {
    fn from(e: ladderskin::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn run(cli: Cli) -> Result<std::path::PathBuf, CliError> {
    match cli.command {
        Command::Spectrum(a) => commands::spectrum(&Params::resolve(&a, None, None, "spectrum")?),
        Command::GapScan(a) => commands::gap_scan_cmd(&Params::resolve(&a, None, None, "gap-scan")?),
        Command::SteadyState { common, leg } => {
            commands::steady_state_cmd(&Params::resolve(&common, leg, None, "steady-state")?)
        }
        Command::Perturb { common, order } => commands::perturb(&Params::resolve(&common, None, order, "perturb")?),
        Command::Trajectories(a) => commands::trajectories(&Params::resolve(&a, None, None, "trajectories")?),
        Command::OracleCompare(a) => commands::oracle_compare(&Params::resolve(&a, None, None, "oracle-compare")?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
