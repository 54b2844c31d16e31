//! Pathwise strong-convergence probe.
//!
//! Both the probed scheme and a finer reference run of the splitting
//! scheme are driven by the same dyadic Brownian path, so the endpoint
//! gap measures the strong (pathwise) error:
//!
//! ```text
//! rms(h) = sqrt( E | Z_h(T) - Z_ref(T) |^2 ),     Z = (x, v),
//! ```
//!
//! expected to scale like `h` for the Euler scheme and `h^2` for the
//! splitting scheme. The Gaussian integrals each splitting half-step
//! needs are left-point Riemann sums over the path's fine cells,
//!
//! ```text
//! xi_v = sum_k sqrt(2 gamma) exp(-gamma (u - k delta)) dB_k,
//! xi_x = sum_k sqrt(2 gamma) (1 - exp(-gamma (u - k delta))) / gamma dB_k,
//! ```
//!
//! with `u = h/2`, while the Euler scheme consumes the plain increment
//! over each step. The step grid must be dyadic in the horizon so every
//! step covers a whole number of path cells; the reference step is the
//! smallest grid step divided by `refine_factor` and the path keeps 128
//! cells per reference step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::linear_fit;
use crate::integrators::{em_step_with_noise, EmNoise, IntegratorKind, State, StepParams, UbuCoeffs};
use crate::model::PotentialModel;
use crate::randomness::{derive_stream, BrownianPath, MAX_PATH_LEVEL};

/// Fine cells kept per reference step (two half-windows of 64).
const CELLS_PER_REFERENCE_STEP: u64 = 128;

/// Configuration of [`strong_order_probe`].
#[derive(Clone, Debug)]
pub struct StrongOrderConfig {
    pub kind: IntegratorKind,
    pub gamma: f64,
    /// Step sizes to probe; each must divide the horizon into `2^j` steps.
    pub h_grid: Vec<f64>,
    /// Final time, at most 4 so path storage stays bounded.
    pub horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Reference step = smallest grid step / this power of two; 1 makes
    /// the reference coincide with the smallest-step run.
    pub refine_factor: usize,
    pub initial_state: State,
}

impl StrongOrderConfig {
    pub fn new(kind: IntegratorKind, gamma: f64, h_grid: Vec<f64>, initial_state: State) -> Self {
        StrongOrderConfig {
            kind,
            gamma,
            h_grid,
            horizon: 1.0,
            n_paths: 100,
            master_seed: 0,
            refine_factor: 16,
            initial_state,
        }
    }
}

/// Root-mean-square endpoint gap at one step size.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongOrderCell {
    pub h: f64,
    pub rms_error: f64,
}

/// All probed step sizes plus the fitted log-log slope.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongOrderReport {
    pub cells: Vec<StrongOrderCell>,
    pub h_ref: f64,
    /// `(slope, intercept)` of `ln rms` against `ln h` over the cells with
    /// a nonzero gap; `None` when fewer than two remain.
    pub loglog_fit: Option<(f64, f64)>,
}

/// Whole number of steps when `horizon / h` is a power of two, else `None`.
fn dyadic_steps(horizon: f64, h: f64) -> Option<u64> {
    if !(h > 0.0) || !h.is_finite() {
        return None;
    }
    let ratio = horizon / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * ratio.abs() || rounded < 1.0 {
        return None;
    }
    let n = rounded as u64;
    n.is_power_of_two().then_some(n)
}

/// Left-point tables for one half-step: `table[k] = w(u - k delta)` with
/// the velocity weight `sqrt(2 gamma) e^{-gamma s}` and position weight
/// `sqrt(2 gamma) (1 - e^{-gamma s}) / gamma`.
struct HalfStepTables {
    e_table: Vec<f64>,
    f_table: Vec<f64>,
}

fn build_half_step_tables(gamma: f64, u: f64, delta: f64, cells: usize) -> HalfStepTables {
    let scale = (2.0 * gamma).sqrt();
    let mut e_table = Vec::with_capacity(cells);
    let mut f_table = Vec::with_capacity(cells);
    for k in 0..cells {
        let s = u - k as f64 * delta;
        let decay = (-gamma * s).exp();
        e_table.push(scale * decay);
        f_table.push(scale * (1.0 - decay) / gamma);
    }
    HalfStepTables { e_table, f_table }
}

/// One scheme run driven entirely by `path`; the same routine produces the
/// reference, so equal step sizes give bitwise-equal endpoints.
fn run_ubu_on_path(
    path: &BrownianPath,
    model: &PotentialModel,
    coeffs: &UbuCoeffs,
    tables: &HalfStepTables,
    h: f64,
    n_steps: u64,
    cells_per_step: usize,
    initial: &State,
) -> Result<State> {
    let d = model.dim();
    let mut state = initial.clone();
    let mut grad = vec![0.0; d];
    let half = cells_per_step / 2;
    for step in 0..n_steps {
        let first_cell = step as usize * cells_per_step;
        let xi_x = path.weighted_sum_with_table(&tables.f_table, first_cell);
        let xi_v = path.weighted_sum_with_table(&tables.e_table, first_cell);
        for c in 0..d {
            state.x[c] += coeffs.f_half * state.v[c] + xi_x[c];
            state.v[c] = coeffs.e_half * state.v[c] + xi_v[c];
        }
        model.grad_into(&state.x, &mut grad);
        let xi_x = path.weighted_sum_with_table(&tables.f_table, first_cell + half);
        let xi_v = path.weighted_sum_with_table(&tables.e_table, first_cell + half);
        for c in 0..d {
            state.v[c] -= h * grad[c];
            state.x[c] += coeffs.f_half * state.v[c] + xi_x[c];
            state.v[c] = coeffs.e_half * state.v[c] + xi_v[c];
        }
        if !state.is_finite() {
            return Err(Error::Divergence { step: step as usize + 1 });
        }
    }
    Ok(state)
}

fn run_em_on_path(
    path: &BrownianPath,
    model: &PotentialModel,
    params: &StepParams,
    h: f64,
    n_steps: u64,
    initial: &State,
) -> Result<State> {
    let d = model.dim();
    let mut state = initial.clone();
    let mut noise = EmNoise::zero(d);
    let mut grad = vec![0.0; d];
    let sqrt_h = h.sqrt();
    for step in 0..n_steps {
        // em_step_with_noise scales by sqrt(2 gamma h), so feeding
        // dB / sqrt(h) injects exactly sqrt(2 gamma) dB.
        let db = path.increment_over(step as f64 * h, h)?;
        for c in 0..d {
            noise.xi[c] = db[c] / sqrt_h;
        }
        model.grad_into(&state.x, &mut grad);
        em_step_with_noise(&mut state, &grad, params, &noise);
        if !state.is_finite() {
            return Err(Error::Divergence { step: step as usize + 1 });
        }
    }
    Ok(state)
}

fn squared_gap(a: &State, b: &State) -> f64 {
    let mut s = 0.0;
    for c in 0..a.dim() {
        let dx = a.x[c] - b.x[c];
        let dv = a.v[c] - b.v[c];
        s += dx * dx + dv * dv;
    }
    s
}

/// Measures the pathwise endpoint error of the chosen scheme against a
/// refined same-path reference and fits the log-log convergence slope.
///
/// Stochastic-gradient variants are rejected: they resample the force
/// each step, so no fixed-path reference exists for them.
pub fn strong_order_probe(
    model: &PotentialModel,
    config: &StrongOrderConfig,
) -> Result<StrongOrderReport> {
    if config.kind.uses_stochastic_gradient() {
        return Err(Error::InvalidParameter(format!(
            "strong-order probe needs the exact gradient; `{}` resamples its force each step",
            config.kind.id()
        )));
    }
    if config.initial_state.dim() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "initial state dimension {} does not match model dimension {}",
            config.initial_state.dim(),
            model.dim()
        )));
    }
    if !(config.horizon > 0.0) || config.horizon > 4.0 {
        return Err(Error::InvalidParameter(format!(
            "horizon must lie in (0, 4], got {}",
            config.horizon
        )));
    }
    if config.h_grid.is_empty() || config.n_paths == 0 {
        return Err(Error::InvalidParameter(
            "strong-order probe needs a nonempty step grid and at least one path".into(),
        ));
    }
    if !config.refine_factor.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "refine_factor must be a power of two, got {}",
            config.refine_factor
        )));
    }
    let mut steps_per_cell = Vec::with_capacity(config.h_grid.len());
    for &h in &config.h_grid {
        match dyadic_steps(config.horizon, h) {
            Some(n) => steps_per_cell.push(n),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "step {h} does not divide the horizon {} into 2^j steps",
                    config.horizon
                )))
            }
        }
    }
    let n_ref = steps_per_cell.iter().copied().max().unwrap() * config.refine_factor as u64;
    let h_ref = config.horizon / n_ref as f64;
    let total_cells = n_ref * CELLS_PER_REFERENCE_STEP;
    let level = total_cells.trailing_zeros();
    if !total_cells.is_power_of_two() || level > MAX_PATH_LEVEL {
        return Err(Error::InvalidParameter(format!(
            "reference resolution needs 2^{level} path cells, beyond the 2^{MAX_PATH_LEVEL} cap; \
             shrink the grid, horizon, or refine_factor"
        )));
    }
    let delta = config.horizon / total_cells as f64;
    let gamma = config.gamma;
    let ref_coeffs = UbuCoeffs::new(gamma, h_ref)?;
    let ref_cells = (total_cells / n_ref) as usize;
    let ref_tables = build_half_step_tables(gamma, h_ref / 2.0, delta, ref_cells / 2);

    struct CellPlan {
        h: f64,
        n_steps: u64,
        cells_per_step: usize,
        coeffs: UbuCoeffs,
        params: StepParams,
        tables: Option<HalfStepTables>,
    }
    let mut plans = Vec::with_capacity(config.h_grid.len());
    for (&h, &n_steps) in config.h_grid.iter().zip(&steps_per_cell) {
        let cells_per_step = (total_cells / n_steps) as usize;
        let tables = matches!(config.kind, IntegratorKind::Ubu)
            .then(|| build_half_step_tables(gamma, h / 2.0, delta, cells_per_step / 2));
        plans.push(CellPlan {
            h,
            n_steps,
            cells_per_step,
            coeffs: UbuCoeffs::new(gamma, h)?,
            params: StepParams::with_max_step(gamma, h, config.horizon)?,
            tables,
        });
    }

    let per_path: Vec<Vec<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|path_index| -> Result<Vec<f64>> {
            let stream = derive_stream(config.master_seed, path_index as u64);
            let path =
                BrownianPath::sample(config.horizon, level, model.dim(), stream)?;
            let reference = run_ubu_on_path(
                &path,
                model,
                &ref_coeffs,
                &ref_tables,
                h_ref,
                n_ref,
                CELLS_PER_REFERENCE_STEP as usize,
                &config.initial_state,
            )?;
            plans
                .iter()
                .map(|plan| {
                    let endpoint = match &plan.tables {
                        Some(tables) => run_ubu_on_path(
                            &path,
                            model,
                            &plan.coeffs,
                            tables,
                            plan.h,
                            plan.n_steps,
                            plan.cells_per_step,
                            &config.initial_state,
                        )?,
                        None => run_em_on_path(
                            &path,
                            model,
                            &plan.params,
                            plan.h,
                            plan.n_steps,
                            &config.initial_state,
                        )?,
                    };
                    Ok(squared_gap(&endpoint, &reference))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let cells: Vec<StrongOrderCell> = plans
        .iter()
        .enumerate()
        .map(|(i, plan)| {
            let mean_sq =
                per_path.iter().map(|row| row[i]).sum::<f64>() / config.n_paths as f64;
            StrongOrderCell { h: plan.h, rms_error: mean_sq.sqrt() }
        })
        .collect();

    let xs: Vec<f64> = cells.iter().filter(|c| c.rms_error > 0.0).map(|c| c.h.ln()).collect();
    let ys: Vec<f64> =
        cells.iter().filter(|c| c.rms_error > 0.0).map(|c| c.rms_error.ln()).collect();
    let loglog_fit = (xs.len() >= 2).then(|| linear_fit(&xs, &ys));
    Ok(StrongOrderReport { cells, h_ref, loglog_fit })
}
