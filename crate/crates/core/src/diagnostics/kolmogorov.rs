//! Semigroup decay and discrete Poisson-equation probes.
//!
//! Both probes study `u(z, t) = E[f(z_t) | z_0 = z] - pi(f)`, estimated
//! by ensembles of splitting-scheme runs at a fine step `h_mc` with the
//! invariant mean taken from quadrature. [`kolmogorov_probe`] records
//! `u(z, t)` on a time grid and fits its exponential decay.
//!
//! [`discrete_poisson_residual`] checks the summation-by-parts identity
//! behind time-average error expansions. With `phi(z) = h * sum_{n=0}^{N}
//! u(z, nh)` built on the exact-time semigroup,
//!
//! ```text
//! ( phi(z) - E_z[ phi(z_h) ] ) / h  =  f(z) - pi(f) - u(z, (N+1) h),
//! ```
//!
//! because the shifted sum telescopes through the Markov property. The
//! probe estimates the left side with two independent ensembles — one for
//! `phi(z)`, one started the same way but summed over `n = 1..N+1`, which
//! the tower property turns into `E_z[ phi(z_h) ]` — subtracts
//! `f(z) - pi(f)`, and reports the residual with its standard error. The
//! truncation term `u(z, (N+1) h)` must first be shown negligible against
//! that standard error via a fitted decay envelope, otherwise the probe
//! refuses to certify anything.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{reference_mean, QuadratureOptions, ReferenceMean};
use crate::integrators::{run_steps, Dynamics, IntegratorKind, State, StepParams};
use crate::model::{PotentialModel, TestFunction};
use crate::randomness::derive_stream;

use super::{fit_exponential_decay, DecayFit, DecayFitOptions};

/// Configuration of [`kolmogorov_probe`].
#[derive(Clone, Debug)]
pub struct KolmogorovConfig {
    pub gamma: f64,
    /// Observation times; must be non-negative, strictly increasing, and
    /// whole multiples of `h_mc`.
    pub t_grid: Vec<f64>,
    pub n_mc: usize,
    /// Fine simulation step for the ensembles.
    pub h_mc: f64,
    pub master_seed: u64,
    pub quadrature: QuadratureOptions,
}

impl KolmogorovConfig {
    pub fn new(gamma: f64, t_grid: Vec<f64>) -> Self {
        KolmogorovConfig {
            gamma,
            t_grid,
            n_mc: 4000,
            h_mc: 1.0 / 32.0,
            master_seed: 0,
            quadrature: QuadratureOptions::default(),
        }
    }
}

/// Decay series of one starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate {
    pub point: State,
    /// `(t, u_hat, stderr)`; the `t = 0` entry is computed analytically.
    pub series: Vec<(f64, f64, f64)>,
    /// Exponential fit through the points that clear three standard
    /// errors; `None` when fewer than three do.
    pub fit: Option<DecayFit>,
    /// Every positive-time value sits inside one standard error of zero,
    /// so no decay rate is measurable (nor needed).
    pub inconclusive: bool,
}

/// All probed points plus the shared invariant mean.
#[derive(Clone, Debug, PartialEq)]
pub struct KolmogorovReport {
    pub reference: ReferenceMean,
    pub points: Vec<PointEstimate>,
}

fn whole_steps(t: f64, h: f64, what: &str) -> Result<usize> {
    let ratio = t / h;
    let rounded = ratio.round();
    if !t.is_finite() || (ratio - rounded).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} {t} is not a whole multiple of the fine step {h}"
        )));
    }
    Ok(rounded as usize)
}

fn check_points(model: &PotentialModel, points: &[State]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("no probe points given".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.dim() != model.dim() {
            return Err(Error::InvalidParameter(format!(
                "probe point {i} has dimension {}, model has {}",
                p.dim(),
                model.dim()
            )));
        }
    }
    Ok(())
}

/// Estimates `u(z, t)` on the time grid for each starting point and fits
/// its exponential decay envelope.
pub fn kolmogorov_probe(
    model: &PotentialModel,
    f: &TestFunction,
    points: &[State],
    config: &KolmogorovConfig,
) -> Result<KolmogorovReport> {
    check_points(model, points)?;
    if config.n_mc < 2 {
        return Err(Error::InvalidParameter(format!(
            "semigroup probe needs at least 2 replicas, got {}",
            config.n_mc
        )));
    }
    if config.t_grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    for pair in config.t_grid.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::InvalidParameter(
                "time grid must be strictly increasing".into(),
            ));
        }
    }
    if config.t_grid[0] < 0.0 {
        return Err(Error::InvalidParameter("negative observation time".into()));
    }
    let params = StepParams::new(config.gamma, config.h_mc)?;
    let steps: Vec<usize> = config
        .t_grid
        .iter()
        .map(|&t| whole_steps(t, config.h_mc, "observation time"))
        .collect::<Result<_>>()?;
    let positive_steps: Vec<usize> = steps.iter().copied().filter(|&n| n > 0).collect();
    let max_steps = positive_steps.last().copied().unwrap_or(0);

    let reference = reference_mean(model, f, config.quadrature)?;
    let pi_hat = reference.value;
    let dynamics = Dynamics::Full(model.clone());

    let mut estimates = Vec::with_capacity(points.len());
    for (point_index, point) in points.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..config.n_mc)
            .into_par_iter()
            .map(|replica| -> Result<Vec<f64>> {
                let mut stream = derive_stream(
                    config.master_seed,
                    (point_index * config.n_mc + replica) as u64,
                );
                let mut row = Vec::with_capacity(positive_steps.len());
                let mut next = 0usize;
                run_steps(
                    IntegratorKind::Ubu,
                    &dynamics,
                    &params,
                    point,
                    max_steps,
                    &mut stream,
                    |step, state| {
                        if next < positive_steps.len() && step == positive_steps[next] {
                            row.push(f.eval(&state.x, &state.v) - pi_hat);
                            next += 1;
                        }
                    },
                )?;
                Ok(row)
            })
            .collect::<Result<_>>()?;

        let mut series = Vec::with_capacity(steps.len());
        let mut positive_column = 0usize;
        for (&t, &n) in config.t_grid.iter().zip(&steps) {
            if n == 0 {
                series.push((t, f.eval(&point.x, &point.v) - pi_hat, 0.0));
                continue;
            }
            let values: Vec<f64> = rows.iter().map(|row| row[positive_column]).collect();
            positive_column += 1;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
                / (values.len() - 1) as f64;
            series.push((t, mean, (var / values.len() as f64).sqrt()));
        }

        let candidates: Vec<(f64, f64)> = series
            .iter()
            .filter(|&&(_, u, se)| u != 0.0 && u.abs() > 3.0 * se)
            .map(|&(t, u, _)| (t, u))
            .collect();
        let fit = fit_exponential_decay(
            &candidates,
            DecayFitOptions { skip_fraction: 0.0, floor: 0.0 },
        )
        .ok();
        let inconclusive =
            series.iter().filter(|&&(t, ..)| t > 0.0).all(|&(_, u, se)| u.abs() <= se);
        estimates.push(PointEstimate { point: point.clone(), series, fit, inconclusive });
    }
    Ok(KolmogorovReport { reference, points: estimates })
}

/// Configuration of [`discrete_poisson_residual`].
#[derive(Clone, Debug)]
pub struct PoissonConfig {
    pub gamma: f64,
    /// Summation spacing of the partial resolvent.
    pub h: f64,
    /// Last retained summand index.
    pub n_max: usize,
    pub n_mc: usize,
    /// Fine simulation step; `h` must be a whole multiple of it.
    pub h_mc: f64,
    pub master_seed: u64,
    pub quadrature: QuadratureOptions,
    /// The truncation-tail envelope may be at most this fraction of the
    /// residual's standard error.
    pub tail_fraction: f64,
}

impl PoissonConfig {
    pub fn new(gamma: f64, h: f64) -> Self {
        PoissonConfig {
            gamma,
            h,
            n_max: 80,
            n_mc: 4000,
            h_mc: 1.0 / 32.0,
            master_seed: 0,
            quadrature: QuadratureOptions::default(),
            tail_fraction: 0.1,
        }
    }
}

/// Identity check at one starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonResidual {
    pub point: State,
    /// `(phi_hat - shift_hat)/h - (f(z) - pi_hat)`; compatible with zero
    /// within its `stderr` when the identity holds.
    pub residual: f64,
    pub stderr: f64,
    /// The partial-resolvent estimate `phi_hat(z)`.
    pub phi: f64,
    /// Envelope bound on the neglected tail `u(z, (n_max + 1) h)`.
    pub tail_estimate: f64,
    /// `tail_fraction * stderr`: what the tail had to stay under.
    pub tail_allowed: f64,
}

struct EnsembleSummary {
    mean_sum: f64,
    se_sum: f64,
    /// Per-checkpoint means and standard errors of `f - pi_hat`.
    checkpoint_means: Vec<f64>,
    checkpoint_ses: Vec<f64>,
}

/// Runs one ensemble from `point`, recording `f - pi_hat` every `spb`
/// steps at block indices `first_block..=last_block` (block 0, when
/// requested, is the exact starting value). Returns the per-replica sums
/// `h * sum_n y_n` aggregated, plus per-checkpoint statistics.
#[allow(clippy::too_many_arguments)]
fn run_ensemble(
    dynamics: &Dynamics,
    f: &TestFunction,
    point: &State,
    params: &StepParams,
    h: f64,
    spb: usize,
    first_block: usize,
    last_block: usize,
    n_mc: usize,
    master_seed: u64,
    stream_base: usize,
    pi_hat: f64,
) -> Result<EnsembleSummary> {
    let n_blocks = last_block - first_block + 1;
    let y0 = f.eval(&point.x, &point.v) - pi_hat;
    let rows: Vec<Vec<f64>> = (0..n_mc)
        .into_par_iter()
        .map(|replica| -> Result<Vec<f64>> {
            let mut stream = derive_stream(master_seed, (stream_base + replica) as u64);
            let mut row = Vec::with_capacity(n_blocks);
            if first_block == 0 {
                row.push(y0);
            }
            run_steps(
                IntegratorKind::Ubu,
                dynamics,
                params,
                point,
                last_block * spb,
                &mut stream,
                |step, state| {
                    if step % spb == 0 && step / spb >= first_block.max(1) {
                        row.push(f.eval(&state.x, &state.v) - pi_hat);
                    }
                },
            )?;
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let sums: Vec<f64> = rows.iter().map(|row| h * row.iter().sum::<f64>()).collect();
    let mean_sum = sums.iter().sum::<f64>() / n_mc as f64;
    let var_sum =
        sums.iter().map(|s| (s - mean_sum) * (s - mean_sum)).sum::<f64>() / (n_mc - 1) as f64;
    let mut checkpoint_means = Vec::with_capacity(n_blocks);
    let mut checkpoint_ses = Vec::with_capacity(n_blocks);
    for k in 0..n_blocks {
        let mean = rows.iter().map(|row| row[k]).sum::<f64>() / n_mc as f64;
        let var = rows.iter().map(|row| (row[k] - mean) * (row[k] - mean)).sum::<f64>()
            / (n_mc - 1) as f64;
        checkpoint_means.push(mean);
        checkpoint_ses.push((var / n_mc as f64).sqrt());
    }
    Ok(EnsembleSummary {
        mean_sum,
        se_sum: (var_sum / n_mc as f64).sqrt(),
        checkpoint_means,
        checkpoint_ses,
    })
}

/// Envelope bound on `u(z, (n_max + 1) h)` from the first ensemble's
/// checkpoint series: a fitted exponential when enough points clear the
/// noise, otherwise a rate lower bound from the first checkpoint that
/// falls under its own standard error.
fn tail_envelope(
    means: &[f64],
    ses: &[f64],
    h: f64,
    n_max: usize,
    point_index: usize,
    allowed: f64,
) -> Result<f64> {
    if means.iter().all(|&u| u == 0.0) {
        return Ok(0.0);
    }
    let geometric_tail = |amplitude: f64, rate: f64| {
        h * amplitude * (-rate * (n_max as f64 + 1.0) * h).exp() / (-(-rate * h).exp_m1())
    };
    let mut candidates = Vec::new();
    for (n, (&u, &se)) in means.iter().zip(ses).enumerate() {
        if u != 0.0 && u.abs() > 3.0 * se {
            candidates.push((n as f64 * h, u));
        }
    }
    if let Ok(fit) =
        fit_exponential_decay(&candidates, DecayFitOptions { skip_fraction: 0.0, floor: 0.0 })
    {
        if fit.rate > 0.0 {
            return Ok(geometric_tail(fit.prefactor, fit.rate));
        }
    }
    let amplitude = means[0].abs();
    for (n, (&u, &se)) in means.iter().zip(ses).enumerate().skip(1) {
        if u.abs() <= se && se > 0.0 && amplitude > se {
            let rate_lb = (amplitude / se).ln() / (n as f64 * h);
            return Ok(geometric_tail(amplitude, rate_lb));
        }
    }
    Err(Error::TailNotResolved { point_index, tail: f64::INFINITY, allowed })
}

/// Estimates the discrete Poisson residual at each point; errs with
/// [`Error::TailNotResolved`] when the truncation tail cannot be bounded
/// below `tail_fraction` of the residual's standard error.
pub fn discrete_poisson_residual(
    model: &PotentialModel,
    f: &TestFunction,
    points: &[State],
    config: &PoissonConfig,
) -> Result<Vec<PoissonResidual>> {
    check_points(model, points)?;
    if config.n_mc < 2 || config.n_max == 0 {
        return Err(Error::InvalidParameter(format!(
            "poisson residual needs n_mc >= 2 and n_max >= 1, got {} and {}",
            config.n_mc, config.n_max
        )));
    }
    if !(config.tail_fraction > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tail_fraction must be positive, got {}",
            config.tail_fraction
        )));
    }
    let params = StepParams::new(config.gamma, config.h_mc)?;
    let spb = whole_steps(config.h, config.h_mc, "summation spacing")?;
    if spb == 0 {
        return Err(Error::InvalidParameter(format!(
            "summation spacing {} is finer than the simulation step {}",
            config.h, config.h_mc
        )));
    }
    let reference = reference_mean(model, f, config.quadrature)?;
    let pi_hat = reference.value;
    let dynamics = Dynamics::Full(model.clone());
    let h = config.h;

    let mut out = Vec::with_capacity(points.len());
    for (point_index, point) in points.iter().enumerate() {
        let ensemble_a = run_ensemble(
            &dynamics,
            f,
            point,
            &params,
            h,
            spb,
            0,
            config.n_max,
            config.n_mc,
            config.master_seed,
            2 * point_index * config.n_mc,
            pi_hat,
        )?;
        let ensemble_b = run_ensemble(
            &dynamics,
            f,
            point,
            &params,
            h,
            spb,
            1,
            config.n_max + 1,
            config.n_mc,
            config.master_seed,
            (2 * point_index + 1) * config.n_mc,
            pi_hat,
        )?;
        let y0 = f.eval(&point.x, &point.v) - pi_hat;
        let residual = (ensemble_a.mean_sum - ensemble_b.mean_sum) / h - y0;
        let stderr =
            (ensemble_a.se_sum * ensemble_a.se_sum + ensemble_b.se_sum * ensemble_b.se_sum)
                .sqrt()
                / h;
        let allowed = config.tail_fraction * stderr;
        let tail = tail_envelope(
            &ensemble_a.checkpoint_means,
            &ensemble_a.checkpoint_ses,
            h,
            config.n_max,
            point_index,
            allowed,
        )?;
        if tail > allowed {
            return Err(Error::TailNotResolved { point_index, tail, allowed });
        }
        out.push(PoissonResidual {
            point: point.clone(),
            residual,
            stderr,
            phi: ensemble_a.mean_sum,
            tail_estimate: tail,
            tail_allowed: allowed,
        });
    }
    Ok(out)
}
