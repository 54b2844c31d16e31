//! The `diagnose` subcommand: runs one named probe, writes its series as
//! CSV, and prints a single PASS/FAIL line with the statistic it measured.

use std::fmt::Write as _;

use ulmc_core::diagnostics::{
    discrete_poisson_residual, kolmogorov_probe, lyapunov_drift_check, moment_stability_probe,
    sync_coupling_probe, tangent_coupling_probe, tangent_decay_probe, CouplingConfig,
    CouplingReport, KolmogorovConfig, MomentProbeConfig, PoissonConfig, TangentProbeConfig,
    TangentState,
};
use ulmc_core::estimator::QuadratureOptions;
use ulmc_core::model::test_function_from_id;
use ulmc_core::State;

use super::point_state;
use crate::config::{resolve_dynamics, resolve_potential, RunConfig};
use crate::error::CliError;
use crate::output::{atomic_write, fmt_float};

/// Minimum log-linear fit quality for a decay rate to count as measured.
const DECAY_R_SQUARED_FLOOR: f64 = 0.5;
/// Residuals within this many standard errors of zero pass.
const RESIDUAL_SIGMA: f64 = 3.0;

struct Outcome {
    pass: bool,
    verdict: String,
    csv: String,
}

pub fn run(config: &RunConfig) -> Result<u8, CliError> {
    let probe = config.probe.as_deref().expect("diagnose always resolves a probe");
    let out = config.out.as_deref().expect("diagnose always resolves an output directory");
    let outcome = match probe {
        "lyapunov" => lyapunov(config)?,
        "moments" => moments(config)?,
        "tangent" => tangent(config)?,
        "tangent-coupling" => tangent_coupling(config)?,
        "coupling" => coupling(config)?,
        "kolmogorov" => kolmogorov(config)?,
        "poisson" => poisson(config)?,
        other => unreachable!("probe '{other}' got past config validation"),
    };

    let csv_name = format!("{}.csv", probe.replace('-', "_"));
    atomic_write(&out.join(&csv_name), &outcome.csv)?;
    atomic_write(&out.join("manifest.txt"), &config.manifest())?;
    println!("{} {probe}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.verdict);
    println!("wrote {csv_name}, manifest.txt to {}", out.display());
    Ok(if outcome.pass { 0 } else { 1 })
}

/// Scalar probe points expanded to model-dimensional states.
fn probe_points(config: &RunConfig, dim: usize) -> Vec<State> {
    config.points.iter().map(|&(x, v)| point_state(x, v, dim)).collect()
}

fn lyapunov(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    if model.dim() != 1 {
        return Err(CliError::Config(format!(
            "the lyapunov probe grids over (x, v) and needs a one-dimensional model, \
             got '{}' with dimension {}",
            config.model,
            model.dim()
        )));
    }
    // 21 x 21 grid over [-5, 5]^2 in (x, v).
    let ticks: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
    let mut grid = Vec::with_capacity(ticks.len() * ticks.len());
    for &x in &ticks {
        for &v in &ticks {
            grid.push(State::new(vec![x], vec![v]));
        }
    }
    let check = lyapunov_drift_check(&model, config.gamma, &grid)?;

    let mut csv = String::from("a,b,core_radius,feasible,points_checked,violations\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        fmt_float(check.a),
        fmt_float(check.b),
        fmt_float(check.core_radius),
        check.feasible,
        check.points_checked,
        check.violations.len(),
    );
    let pass = check.feasible && check.a > 0.0;
    let verdict = if pass {
        format!(
            "drift coefficient a = {:.4} > 0 with core radius {:.3} over {} grid states",
            check.a, check.core_radius, check.points_checked
        )
    } else {
        format!(
            "no valid drift pair: a = {:.4}, {} of {} grid states violate the inequality",
            check.a,
            check.violations.len(),
            check.points_checked
        )
    };
    Ok(Outcome { pass, verdict, csv })
}

fn moments(config: &RunConfig) -> Result<Outcome, CliError> {
    let kind = config.integrators[0];
    let dynamics = resolve_dynamics(&config.model, kind)?;
    let h = config.h[0];
    let mut probe = MomentProbeConfig::new(
        kind,
        config.gamma,
        h,
        State::new(config.x0.clone(), config.v0.clone()),
    );
    probe.r = config.r;
    probe.n_steps = (config.total_time / h).round() as usize;
    probe.ensemble = config.trajectories;
    probe.master_seed = config.seed;
    let series = moment_stability_probe(&dynamics, &probe)?;

    let mut csv = String::from("step,time,mean,stderr,survivors\n");
    for point in &series.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            point.step,
            fmt_float(point.time),
            fmt_float(point.mean),
            fmt_float(point.stderr),
            point.survivors,
        );
    }
    let pass = !series.flagged;
    let verdict = format!(
        "{} checkpoint moment ratio {:.3} against growth cap {} ({} of {} trajectories diverged)",
        if pass { "largest" } else { "runaway" },
        series.max_ratio,
        probe.growth_cap,
        series.diverged_count,
        probe.ensemble,
    );
    Ok(Outcome { pass, verdict, csv })
}

fn series_csv(header: &str, series: &[(f64, f64)]) -> String {
    let mut csv = format!("{header}\n");
    for &(t, value) in series {
        let _ = writeln!(csv, "{},{}", fmt_float(t), fmt_float(value));
    }
    csv
}

fn tangent(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    let mut probe = TangentProbeConfig::new(
        config.total_time,
        config.h[0],
        State::new(config.x0.clone(), config.v0.clone()),
    );
    probe.seed = config.seed;
    let frame = TangentState::identity_position(model.dim());
    let report = tangent_decay_probe(&model, config.gamma, &frame, &probe)?;

    let csv = series_csv("t,amplitude", &report.series);
    match &report.fit {
        Some(fit) if fit.rate > 0.0 && fit.r_squared >= DECAY_R_SQUARED_FLOOR => Ok(Outcome {
            pass: true,
            verdict: format!(
                "tangent amplitude decays at rate {:.4} (r^2 = {:.3}, threshold {})",
                fit.rate, fit.r_squared, DECAY_R_SQUARED_FLOOR
            ),
            csv,
        }),
        Some(fit) => Ok(Outcome {
            pass: false,
            verdict: format!(
                "fitted rate {:.4} with r^2 = {:.3} does not establish decay \
                 (need rate > 0 and r^2 >= {})",
                fit.rate, fit.r_squared, DECAY_R_SQUARED_FLOOR
            ),
            csv,
        }),
        None => Ok(Outcome {
            pass: false,
            verdict: "no measurable decay: too few points clear the fit floor".to_string(),
            csv,
        }),
    }
}

/// Shared verdict rule for the two coupling probes: an exactly-coincident
/// pair passes outright, otherwise the gap must fit a positive decay rate.
fn coupling_outcome(report: &CouplingReport, what: &str) -> Outcome {
    let csv = series_csv("t,gap", &report.series);
    if report.final_gap == 0.0 {
        return Outcome {
            pass: true,
            verdict: format!(
                "{what} contracts to exact coincidence (initial gap {:.3e}, final gap 0)",
                report.initial_gap
            ),
            csv,
        };
    }
    match &report.fit {
        Some(fit) if fit.rate > 0.0 => Outcome {
            pass: true,
            verdict: format!(
                "{what} gap decays at rate {:.4} (initial {:.3e}, final {:.3e})",
                fit.rate, report.initial_gap, report.final_gap
            ),
            csv,
        },
        Some(fit) => Outcome {
            pass: false,
            verdict: format!(
                "{what} gap rate {:.4} is not positive (final gap {:.3e})",
                fit.rate, report.final_gap
            ),
            csv,
        },
        None => Outcome {
            pass: false,
            verdict: format!(
                "{what} gap neither vanishes nor fits a decay (final gap {:.3e})",
                report.final_gap
            ),
            csv,
        },
    }
}

fn coupling_endpoints(config: &RunConfig, dim: usize) -> Result<(State, State), CliError> {
    let points = probe_points(config, dim);
    match points.as_slice() {
        [a, b, ..] => Ok((a.clone(), b.clone())),
        _ => Err(CliError::Config(format!(
            "coupling probes need two points (x:v;x:v), got {}",
            points.len()
        ))),
    }
}

fn tangent_coupling(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    let (z0, z1) = coupling_endpoints(config, model.dim())?;
    let mut probe = TangentProbeConfig::new(config.total_time, config.h[0], z0.clone());
    probe.seed = config.seed;
    let frame = TangentState::identity_position(model.dim());
    let report = tangent_coupling_probe(&model, config.gamma, &z0, &z1, &frame, &probe)?;
    Ok(coupling_outcome(&report, "tangent-flow"))
}

fn coupling(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    let (z0, z1) = coupling_endpoints(config, model.dim())?;
    let mut probe = CouplingConfig::new(config.total_time, config.h[0]);
    probe.seed = config.seed;
    let report = sync_coupling_probe(&model, config.gamma, &z0, &z1, &probe)?;
    Ok(coupling_outcome(&report, "common-noise state"))
}

fn kolmogorov(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    let f = test_function_from_id(&config.f)?;
    let points = probe_points(config, model.dim());
    let mut probe = KolmogorovConfig::new(config.gamma, config.t_grid.clone());
    probe.n_mc = config.n_mc;
    probe.h_mc = config.h_mc;
    probe.master_seed = config.seed;
    probe.quadrature = QuadratureOptions::default();
    let report = kolmogorov_probe(&model, &f, &points, &probe)?;

    let mut csv = String::from("point_index,x,v,t,u_hat,stderr\n");
    for (index, point) in report.points.iter().enumerate() {
        for &(t, u_hat, stderr) in &point.series {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                index,
                fmt_float(point.point.x[0]),
                fmt_float(point.point.v[0]),
                fmt_float(t),
                fmt_float(u_hat),
                fmt_float(stderr),
            );
        }
    }
    let mut slowest: Option<f64> = None;
    let mut failing = Vec::new();
    for (index, point) in report.points.iter().enumerate() {
        match (&point.fit, point.inconclusive) {
            (_, true) => {} // already at the noise level everywhere: nothing to decay
            (Some(fit), _) if fit.rate > 0.0 => {
                slowest = Some(slowest.map_or(fit.rate, |s: f64| s.min(fit.rate)));
            }
            _ => failing.push(index),
        }
    }
    if failing.is_empty() {
        let rate = slowest
            .map_or("all points start inside the noise band".to_string(), |r| {
                format!("slowest fitted rate {r:.4}")
            });
        Ok(Outcome {
            pass: true,
            verdict: format!("expectations relax toward the invariant mean ({rate})"),
            csv,
        })
    } else {
        Ok(Outcome {
            pass: false,
            verdict: format!(
                "{} of {} points show no positive decay rate (indices {:?})",
                failing.len(),
                report.points.len(),
                failing
            ),
            csv,
        })
    }
}

fn poisson(config: &RunConfig) -> Result<Outcome, CliError> {
    let model = resolve_potential(&config.model)?;
    let f = test_function_from_id(&config.f)?;
    let points = probe_points(config, model.dim());
    let mut probe = PoissonConfig::new(config.gamma, config.h[0]);
    probe.n_max = config.n_max;
    probe.n_mc = config.n_mc;
    probe.h_mc = config.h_mc;
    probe.master_seed = config.seed;
    probe.quadrature = QuadratureOptions::default();
    let residuals = discrete_poisson_residual(&model, &f, &points, &probe)?;

    let mut csv = String::from("point_index,x,v,phi,residual,stderr,tail,tail_allowed\n");
    let mut worst = 0.0f64;
    for (index, r) in residuals.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            index,
            fmt_float(r.point.x[0]),
            fmt_float(r.point.v[0]),
            fmt_float(r.phi),
            fmt_float(r.residual),
            fmt_float(r.stderr),
            fmt_float(r.tail_estimate),
            fmt_float(r.tail_allowed),
        );
        let sigmas = if r.stderr > 0.0 {
            r.residual.abs() / r.stderr
        } else if r.residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(sigmas);
    }
    let pass = worst <= RESIDUAL_SIGMA;
    Ok(Outcome {
        pass,
        verdict: format!(
            "largest residual is {worst:.2} standard errors from zero \
             (threshold {RESIDUAL_SIGMA}) over {} points",
            residuals.len()
        ),
        csv,
    })
}
