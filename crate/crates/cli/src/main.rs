//! Command-line front end for fitting Bayesian spatial models on one areal
//! layer and predicting onto another whose boundaries do not align with it.
//!
//! Subcommands: `simulate` (synthetic two-layer studies, datasets included),
//! `fit` (posterior sampling on a GeoJSON layer + CSV), `predict` (transfer
//! a fit to a target layer), `compare` (hybrid vs truncated-Moran study),
//! and `knots-sensitivity` (accuracy/runtime across basis sizes). Every run
//! writes `run-manifest.json`; `--manifest` replays one bit for bit.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data errors,
//! 4 numerical failures.

mod artifacts;
mod commands;
mod errors;
mod inputs;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::errors::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "misalign",
    version,
    about = "Fit areal spatial models and predict across misaligned layers"
)]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = configure_threads() {
        eprintln!("error: {err}");
        return ExitCode::from(err.exit_code());
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

/// MISALIGN_THREADS caps replication-level concurrency. Results never
/// depend on it: every stochastic stream is seeded per task, so the cap
/// only trades wall-clock time for core count.
fn configure_threads() -> Result<(), CliError> {
    let raw = match std::env::var("MISALIGN_THREADS") {
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(CliError::Config(format!("MISALIGN_THREADS: {e}"))),
        Ok(raw) => raw,
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Config(format!("MISALIGN_THREADS must be a positive integer, got `{raw}`"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}
