//! Command-line front end for the transmission solver.
//!
//! Each command reads a TOML problem file (see [`config`]) and writes its
//! results into the output directory. Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | configuration error |
//! | 2 | non-convergence or partial branch |
//! | 3 | internal error |
//! | 4 | a `verify` check failed |

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use config::{load_config, parse_config, ProblemConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("verification failed: {}", .0.join(", "))]
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Internal(_) => 3,
            CliError::VerifyFailed(_) => 4,
        }
    }

    pub(crate) fn internal(e: impl std::fmt::Display) -> CliError {
        CliError::Internal(e.to_string())
    }

    pub(crate) fn io(e: std::io::Error) -> CliError {
        CliError::Internal(format!("writing output: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tbem",
    version,
    about = "Nonlinear transmission problems by boundary integral equations"
)]
pub struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Replace a verify threshold, as NAME=VALUE (testing hook).
    #[arg(long = "override-threshold", global = true, hide = true, value_parser = parse_override)]
    pub overrides: Vec<(String, f64)>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the unperturbed problem.
    Solve { config: PathBuf },
    /// Follow the solution along the configured shape family.
    Perturb { config: PathBuf },
    /// Check operator identities and the solution on the configured geometry.
    Verify { config: PathBuf },
    /// Re-solve at increasing node counts and report probe differences.
    Convergence { config: PathBuf },
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value = value
        .parse::<f64>()
        .map_err(|e| format!("bad value: {e}"))?;
    Ok((name.to_string(), value))
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let path = match &cli.command {
        Command::Solve { config }
        | Command::Perturb { config }
        | Command::Verify { config }
        | Command::Convergence { config } => config,
    };
    let cfg = load_config(path).map_err(|e| CliError::Config(e.to_string()))?;
    let out = output::OutputDir::create(&cli.out_dir).map_err(CliError::io)?;
    match &cli.command {
        Command::Solve { .. } => commands::cmd_solve(&cfg, &out),
        Command::Perturb { .. } => commands::cmd_perturb(&cfg, &out),
        Command::Convergence { .. } => commands::cmd_convergence(&cfg, &out),
        Command::Verify { .. } => {
            let overrides: BTreeMap<String, f64> = cli.overrides.iter().cloned().collect();
            verify::cmd_verify(&cfg, &out, cli.seed, &overrides)
        }
    }
}
