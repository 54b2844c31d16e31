//! The `reference-mean` subcommand: quadrature value of the stationary
//! expectation, printed to stdout and written out only on request.

use std::fmt::Write as _;

use ulmc_core::estimator::{reference_mean, QuadratureOptions};
use ulmc_core::model::test_function_from_id;

use crate::config::{resolve_potential, RunConfig};
use crate::error::CliError;
use crate::output::{atomic_write, csv_field, fmt_float};

pub fn run(config: &RunConfig) -> Result<u8, CliError> {
    let model = resolve_potential(&config.model)?;
    let f = test_function_from_id(&config.f)?;
    let reference = reference_mean(&model, &f, QuadratureOptions::default())?;

    println!(
        "pi({}) = {} +/- {:.3e}  [{}]",
        config.f,
        fmt_float(reference.value),
        reference.abs_error_bound,
        reference.method,
    );
    if let Some(out) = &config.out {
        let mut csv = String::from("value,abs_error_bound,method\n");
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_float(reference.value),
            fmt_float(reference.abs_error_bound),
            csv_field(&reference.method),
        );
        atomic_write(&out.join("reference.csv"), &csv)?;
        atomic_write(&out.join("manifest.txt"), &config.manifest())?;
        println!("wrote reference.csv, manifest.txt to {}", out.display());
    }
    Ok(0)
}
