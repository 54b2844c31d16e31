//! `ulmc`: sweep, strong-order, diagnose, and reference-mean entry point.
//!
//! Exit codes: 0 success or PASS, 1 quantitative FAIL, 2 configuration or
//! usage error, 3 simulation divergence.

mod args;
mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Cmd, RunArgs};
use config::{Partial, RunConfig};
use error::CliError;

fn load_config(command: &str, probe: Option<&str>, args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut partial = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|err| {
                CliError::Config(format!("cannot read config {}: {err}", path.display()))
            })?;
            Partial::from_text(&text)?
        }
        None => Partial::default(),
    };
    partial.apply_args(args)?;
    config::resolve(command, probe, partial)
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let (command, probe, args) = match &cli.command {
        Cmd::Sweep(args) => ("sweep", None, args),
        Cmd::StrongOrder(args) => ("strong-order", None, args),
        Cmd::Diagnose { probe, args } => ("diagnose", probe.as_deref(), args),
        Cmd::ReferenceMean(args) => ("reference-mean", None, args),
    };
    let mut config = load_config(command, probe, args)?;

    // Compute-heavy paths parallelize internally; a nonzero worker count
    // pins the global pool (ignored if something already built it).
    if config.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global();
    }

    match cli.command {
        Cmd::Sweep(_) => commands::sweep::run(&config),
        Cmd::StrongOrder(_) => commands::strong_order::run(&mut config),
        Cmd::Diagnose { .. } => commands::diagnose::run(&config),
        Cmd::ReferenceMean(_) => commands::reference_mean::run(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Usage problems exit 2; --help and --version exit 0.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
