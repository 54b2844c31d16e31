//! The `strong-order` subcommand: pathwise RMS error against a refined
//! common-noise reference, with a PASS/FAIL verdict on the fitted order.

use std::fmt::Write as _;

use ulmc_core::diagnostics::{strong_order_probe, StrongOrderConfig};
use ulmc_core::{IntegratorKind, State};

use crate::config::{resolve_potential, RunConfig};
use crate::error::CliError;
use crate::output::{atomic_write, fmt_float};

/// Expected-order band per integrator, used when `--band` is absent.
fn default_band(kind: IntegratorKind) -> (f64, f64) {
    match kind {
        IntegratorKind::Em | IntegratorKind::SgEm => (0.8, 1.2),
        IntegratorKind::Ubu | IntegratorKind::SgUbu => (1.8, 2.2),
    }
}

pub fn run(config: &mut RunConfig) -> Result<u8, CliError> {
    let kind = config.integrators[0];
    let band = config.band.unwrap_or_else(|| default_band(kind));
    config.band = Some(band); // echoed by the manifest
    let model = resolve_potential(&config.model)?;
    let out = config.out.as_deref().expect("strong-order always resolves an output directory");

    let mut probe = StrongOrderConfig::new(
        kind,
        config.gamma,
        config.h.clone(),
        State::new(config.x0.clone(), config.v0.clone()),
    );
    probe.horizon = config.total_time;
    probe.n_paths = config.trajectories;
    probe.master_seed = config.seed;
    let report = strong_order_probe(&model, &probe)?;

    let mut csv = String::from("h,rms_error\n");
    for cell in &report.cells {
        let _ = writeln!(csv, "{},{}", fmt_float(cell.h), fmt_float(cell.rms_error));
    }
    let (slope, intercept) = report.loglog_fit.unwrap_or((f64::NAN, f64::NAN));
    let mut fit_csv = String::from("slope,intercept,h_ref,band_lo,band_hi\n");
    let _ = writeln!(
        fit_csv,
        "{},{},{},{},{}",
        fmt_float(slope),
        fmt_float(intercept),
        fmt_float(report.h_ref),
        fmt_float(band.0),
        fmt_float(band.1),
    );

    atomic_write(&out.join("strong_order.csv"), &csv)?;
    atomic_write(&out.join("strong_order_fit.csv"), &fit_csv)?;
    atomic_write(&out.join("manifest.txt"), &config.manifest())?;

    let pass = report.loglog_fit.is_some() && slope >= band.0 && slope <= band.1;
    println!(
        "{} {}: fitted order {:.3} against band [{}, {}] over {} step sizes",
        if pass { "PASS" } else { "FAIL" },
        kind.id(),
        slope,
        band.0,
        band.1,
        report.cells.len(),
    );
    println!("wrote strong_order.csv, strong_order_fit.csv, manifest.txt to {}", out.display());
    Ok(if pass { 0 } else { 1 })
}
