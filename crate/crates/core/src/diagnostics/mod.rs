//! Numerical verification of the contraction and mixing structure the
//! statistical-error analysis relies on.
//!
//! Five probe families, each an empirical counterpart of one analytical
//! ingredient:
//!
//! - [`strong_order`]: pathwise convergence rates against a common Brownian
//!   path refined far below the probed steps;
//! - [`lyapunov`]: the quadratic Lyapunov drift inequality and uniform
//!   moment bounds along simulated ensembles;
//! - [`tangent`]: decay of the derivative (tangent) processes and of
//!   synchronously coupled trajectories;
//! - [`kolmogorov`]: decay of `u(x, v, t) = E f(z_t) - pi(f)` from fixed
//!   starting points, and the discrete Poisson identity
//!
//! ```text
//! (phi_h(z) - E phi_h(z_h)) / h = f(z) - pi(f),
//! phi_h(z) = h * sum_{n>=0} u(z, n h),
//! ```
//!
//!   validated statistically with truncation-tail control.
//!
//! Decay rates are measured by [`fit_exponential_decay`], a log-linear
//! least-squares fit with a transient cut and a noise floor.

pub mod kolmogorov;
pub mod lyapunov;
pub mod strong_order;
pub mod tangent;

pub use kolmogorov::{
    discrete_poisson_residual, kolmogorov_probe, KolmogorovConfig, KolmogorovReport,
    PointEstimate, PoissonConfig, PoissonResidual,
};
pub use lyapunov::{
    generator_drift, lyapunov_drift_check, moment_stability_probe, DriftCheck, LyapunovParams,
    MomentProbeConfig, MomentSeries,
};
pub use strong_order::{strong_order_probe, StrongOrderConfig, StrongOrderReport};
pub use tangent::{
    sync_coupling_probe, tangent_coupling_probe, tangent_decay_probe, CouplingConfig,
    CouplingReport, TangentProbeConfig, TangentReport, TangentState,
};

use crate::error::{Error, Result};
use crate::estimator::linear_fit;

/// A fitted exponential `value(t) ~ prefactor * exp(-rate * t)`.
///
/// `rate > 0` means decay; a nonpositive rate is a reportable finding, not
/// an error. `r_squared` grades the log-linear fit on the points used.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Time span `[t_first, t_last]` of the points that entered the fit.
    pub window: (f64, f64),
    pub points_used: usize,
}

/// Controls for [`fit_exponential_decay`].
#[derive(Clone, Copy, Debug)]
pub struct DecayFitOptions {
    /// Fraction of the time span discarded from the front as transient.
    pub skip_fraction: f64,
    /// Absolute magnitude below which points are treated as noise and
    /// excluded.
    pub floor: f64,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        DecayFitOptions { skip_fraction: 0.1, floor: 0.0 }
    }
}

/// Log-linear least squares on `(t, |value|)` pairs after discarding the
/// transient head and sub-floor entries. Needs at least three usable
/// points.
pub fn fit_exponential_decay(
    series: &[(f64, f64)],
    options: DecayFitOptions,
) -> Result<DecayFit> {
    if series.is_empty() {
        return Err(Error::FitWindow { need: 3, got: 0 });
    }
    let t_first = series.first().unwrap().0;
    let t_last = series.last().unwrap().0;
    let cut = t_first + options.skip_fraction * (t_last - t_first);
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for &(t, value) in series {
        if t < cut || value.abs() <= options.floor || !value.is_finite() {
            continue;
        }
        ts.push(t);
        logs.push(value.abs().ln());
    }
    if ts.len() < 3 {
        return Err(Error::FitWindow { need: 3, got: ts.len() });
    }
    let (slope, intercept) = linear_fit(&ts, &logs);
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
    let ss_tot: f64 = logs.iter().map(|y| (y - mean_log) * (y - mean_log)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(&logs)
        .map(|(&t, &y)| {
            let fit = intercept + slope * t;
            (y - fit) * (y - fit)
        })
        .sum();
    // ss_tot of a constant series is rounding noise, not signal; treat
    // anything below the accumulation noise scale as exactly flat.
    let noise_scale = 1e-24 * logs.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared =
        if ss_tot > noise_scale { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp(),
        r_squared,
        window: (ts[0], *ts.last().unwrap()),
        points_used: ts.len(),
    })
}
