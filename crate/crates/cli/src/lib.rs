//! Command-line driver: interval simulation over a renewable time series,
//! randomized verification of the pricing guarantees, and a three-way policy
//! comparison.

pub mod compare;
pub mod histogram;
pub mod output;
pub mod simulate;
pub mod synthetic;
pub mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oe_community::{Bisection, Error};

#[derive(Debug, Parser)]
#[command(
    name = "oe-market",
    version,
    about = "Envelope-aware community pricing under net metering"
)]
pub struct Cli {
    /// Residual tolerance (kWh) of the demand-balance solver; overrides the config.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price every interval of a series and write records, summaries and histograms.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the pricing guarantees on randomly generated communities.
    Verify {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        iterations: u64,
        /// TOML instance spec; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Where to write violations.
        #[arg(long, default_value = "violations.csv")]
        out: PathBuf,
        /// Negative control: pay no rewards.
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<verify::Fault>,
    },
    /// Per-member surplus under the community policy, member-level D-NEM and standalone NEM.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failed run and its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input data (exit 1).
    Usage(anyhow::Error),
    /// A checked property does not hold (exit 2).
    Verification(String),
    /// Solver or I/O failure while running (exit 3).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Usage(_) => 1,
            Failure::Verification(_) => 2,
            Failure::Runtime(_) => 3,
        })
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "{e:#}"),
            Failure::Verification(msg) => write!(f, "verification failed: {msg}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

/// Classifies a library error as a usage or runtime failure.
pub fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::UnknownMember(_)
        | Error::Usage(_)
        | Error::Parse { .. }
        | Error::Io { .. } => Failure::Usage(e.into()),
        Error::Infeasible(_)
        | Error::TargetOutOfRange { .. }
        | Error::NoConvergence { .. }
        | Error::ThresholdCrossing(_) => Failure::Runtime(e.into()),
    }
}

pub(crate) fn solver_with(base: Bisection, tolerance: Option<f64>) -> Result<Bisection, Failure> {
    match tolerance {
        Some(tol) => Bisection::with_tolerance(tol)
            .map(|b| Bisection {
                max_iterations: base.max_iterations,
                ..b
            })
            .map_err(classify),
        None => Ok(base),
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, series, out } => simulate::command(&config, &series, &out, cli.tolerance),
        Command::Verify {
            seed,
            iterations,
            spec,
            out,
            inject_fault,
        } => verify::command(seed, iterations, spec.as_deref(), &out, inject_fault, cli.tolerance),
        Command::Compare { config, series, out } => compare::command(&config, &series, &out, cli.tolerance),
    }
}
