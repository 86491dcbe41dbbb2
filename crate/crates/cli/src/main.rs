//! `sofar` command-line front end: CSV matrices in, JSON results out.

mod args;
mod commands;
mod io;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use sofar::SofarError;

use crate::args::Cli;

/// Usage and data errors.
const EXIT_USAGE: u8 = 2;
/// The solver diverged.
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<SofarError>(), Some(SofarError::Diverged { .. })));
    if diverged {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = cli.threads {
        anyhow::ensure!(threads > 0, "--threads must be positive");
        pool = pool.num_threads(threads);
    }
    let pool = pool.build().context("cannot start the worker pool")?;
    pool.install(|| commands::run(cli.command))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_maps_to_numerical_exit() {
        let diverged = SofarError::Diverged {
            outer_iterations: 3,
            last_objective: f64::NAN,
            objective_trace: Vec::new(),
        };
        let err = anyhow::Error::new(diverged).context("while fitting");
        assert_eq!(exit_code(&err), EXIT_NUMERICAL);
        let invalid = anyhow::Error::new(SofarError::InvalidArgument("rank".into()));
        assert_eq!(exit_code(&invalid), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("bad file")), EXIT_USAGE);
    }
}
