//! Reference ensemble averages by tensor quadrature and statistical-error
//! sweeps across step sizes.
//!
//! The invariant law factorizes as
//!
//! ```text
//! pi(dx, dv) = (1/Z) exp(-U(x)) dx  (tensor)  N(0, I_d)(dv),
//! ```
//!
//! so `pi(f)` reduces to a position integral against `exp(-U)` paired with a
//! Gauss-Hermite rule in velocity. Sweeps estimate the time-average error
//!
//! ```text
//! e(N, h) = (1/N) sum_{n=0}^{N-1} f(Z_n) - pi(f),      N = round(T / h),
//! ```
//!
//! over ensembles of independent trajectories, decompose its mean square into
//! squared bias plus scaled sample variance, and fit log-log slopes of the
//! mean-square error against the step size (optionally after subtracting the
//! finest cell's value as an estimate of the `1/T` plateau).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{
    simulate_time_average, Dynamics, IntegratorKind, State, StepParams,
};
use crate::model::{PotentialModel, TestFunction};
use crate::randomness::derive_stream;

/// Compensated (Kahan) accumulator for long quadrature sums.
#[derive(Clone, Copy, Debug, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, value: f64) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    fn value(self) -> f64 {
        self.sum
    }
}

/// Ordinary least squares on `(x, y)` pairs; returns `(slope, intercept)`.
///
/// Callers must supply at least two points with nonzero spread in `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

// ---------------------------------------------------------------------------
// Gaussian quadrature rules (Golub-Welsch on the Jacobi matrix).
// ---------------------------------------------------------------------------

/// Nodes and weights of a symmetric-weight Gaussian rule from the Jacobi
/// matrix off-diagonal `beta`; weights are the squared first eigenvector
/// components scaled by `mass` (the total weight-function integral).
fn golub_welsch_symmetric(beta: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let n = beta.len() + 1;
    let jacobi = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eigen = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eigen.eigenvectors[(0, k)];
            (eigen.eigenvalues[k], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `n`-node Gauss-Legendre rule on `[-1, 1]` (weight total 2).
fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let beta: Vec<f64> =
        (1..n).map(|k| k as f64 / (4.0 * (k * k) as f64 - 1.0).sqrt()).collect();
    golub_welsch_symmetric(&beta, 2.0)
}

/// `n`-node Gaussian rule for the standard normal law: `sum w_i g(v_i)`
/// approximates `E[g(V)]`, `V ~ N(0, 1)`; weights sum to 1.
fn gauss_hermite_normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one node");
    // Physicists' Hermite (weight exp(-t^2)) has beta_k = sqrt(k/2); the
    // orthonormal eigenvector rows make the squared first components sum to
    // one, which is exactly the normalized-weight total. Nodes map by
    // v = sqrt(2) t.
    let beta: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let (nodes, weights) = golub_welsch_symmetric(&beta, 1.0);
    (nodes.into_iter().map(|t| std::f64::consts::SQRT_2 * t).collect(), weights)
}

// ---------------------------------------------------------------------------
// Reference means.
// ---------------------------------------------------------------------------

/// Quadrature controls for [`reference_mean`].
#[derive(Clone, Copy, Debug)]
pub struct QuadratureOptions {
    /// Convergence target on the ratio between successive panel doublings,
    /// relative to `max(1, |value|)`.
    pub rel_tol: f64,
    /// Required boundary exceedance of `U(x) - c1 |x|` over the interior
    /// minimum of `U` before the domain stops growing.
    pub tail_margin: f64,
    /// Gauss-Hermite nodes per velocity axis; 0 picks a dimension-based
    /// default (64 in one dimension, 24 in two).
    pub velocity_nodes: usize,
    /// Cap on total integrand evaluations per pass.
    pub eval_budget: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            rel_tol: 1e-12,
            tail_margin: 40.0,
            velocity_nodes: 0,
            eval_budget: 1 << 28,
        }
    }
}

/// A quadrature value for `pi(f)` with its resolution-doubling error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMean {
    pub value: f64,
    pub abs_error_bound: f64,
    /// Human-readable record of the rule that produced the value.
    pub method: String,
}

/// Nodes per Gauss-Legendre panel in the position quadrature.
const PANEL_ORDER: usize = 16;
/// Initial panels per position axis.
const INITIAL_PANELS: usize = 4;
/// Domain half-width doublings tried before giving up on confinement.
const MAX_DOMAIN_DOUBLINGS: u32 = 16;

/// Computes `pi(f)` for the invariant law `(1/Z) exp(-U(x)) dx` tensor a
/// standard Gaussian in `v`, by composite Gauss-Legendre quadrature in `x`
/// over `[-L, L]^d` and a Gauss-Hermite rule in `v`.
///
/// The numerator and normalizer accumulate in one pass, so `f` identically
/// `1.0` yields exactly `1.0`.
pub fn reference_mean(
    model: &PotentialModel,
    f: &TestFunction,
    options: QuadratureOptions,
) -> Result<ReferenceMean> {
    let d = model.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension { dim: d });
    }
    if !(options.rel_tol > 0.0) || !(options.tail_margin > 0.0) {
        return Err(Error::InvalidParameter(
            "quadrature options: rel_tol and tail_margin must be positive".into(),
        ));
    }

    let (half_width, u_min) = confining_domain(model, options.tail_margin)?;

    let gh_nodes = if options.velocity_nodes > 0 {
        options.velocity_nodes
    } else if d == 1 {
        64
    } else {
        24
    };
    let v_rule = gauss_hermite_normal_rule(gh_nodes);
    let v_evals = v_rule.0.len().pow(d as u32);

    let mut panels = INITIAL_PANELS;
    let mut previous: Option<f64> = None;
    let mut gap = f64::INFINITY;
    let value = loop {
        let x_nodes_per_axis = PANEL_ORDER * panels;
        let total_evals = x_nodes_per_axis.pow(d as u32).saturating_mul(v_evals);
        if total_evals > options.eval_budget {
            return Err(Error::QuadratureFailed(format!(
                "position quadrature did not converge within the evaluation budget \
                 (last doubling changed the value by {gap:.3e} against a target of {:.3e})",
                options.rel_tol
            )));
        }
        let value = ratio_on_grid(model, f, half_width, u_min, panels, &v_rule);
        if let Some(prev) = previous {
            gap = (value - prev).abs();
            if gap <= options.rel_tol * value.abs().max(1.0) {
                break value;
            }
        }
        previous = Some(value);
        panels *= 2;
    };

    // Independent resolution check on the velocity rule: halving its node
    // count bounds that rule's contribution to the error.
    let coarse_v = gauss_hermite_normal_rule((gh_nodes / 2).max(8));
    let v_gap = (ratio_on_grid(model, f, half_width, u_min, panels, &coarse_v) - value).abs();
    let abs_error_bound = gap + v_gap + 1e-15 * value.abs().max(1.0);

    Ok(ReferenceMean {
        value,
        abs_error_bound,
        method: format!(
            "composite {PANEL_ORDER}-node Gauss-Legendre, {panels} panels per axis on \
             [-{half_width}, {half_width}]^{d}, {gh_nodes}-node Gauss-Hermite velocity rule"
        ),
    })
}

/// Expands `[-L, L]^d` until `U - c1 |x|` exceeds the interior minimum of
/// `U` by `tail_margin` everywhere on the boundary; returns `(L, U_min)`.
fn confining_domain(model: &PotentialModel, tail_margin: f64) -> Result<(f64, f64)> {
    let d = model.dim();
    let c1 = model.c1();
    let mut half_width = 4.0;
    for _ in 0..MAX_DOMAIN_DOUBLINGS {
        let u_min = interior_minimum(model, half_width);
        let boundary = boundary_points(d, half_width);
        let cleared = boundary.iter().all(|p| {
            let norm = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            model.potential(p) - c1 * norm >= u_min + tail_margin
        });
        if cleared {
            return Ok((half_width, u_min));
        }
        half_width *= 2.0;
    }
    Err(Error::QuadratureFailed(format!(
        "potential '{}' does not confine: growing the domain to half-width {half_width} \
         never cleared the boundary-tail margin {tail_margin}",
        model.id()
    )))
}

/// Coarse tensor-grid minimum of `U` over `[-L, L]^d`.
fn interior_minimum(model: &PotentialModel, half_width: f64) -> f64 {
    let d = model.dim();
    let per_axis: usize = if d == 1 { 4097 } else { 257 };
    let mut x = vec![0.0; d];
    let mut min = f64::INFINITY;
    let total = per_axis.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        for axis in x.iter_mut() {
            let i = rem % per_axis;
            rem /= per_axis;
            *axis = -half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64;
        }
        min = min.min(model.potential(&x));
    }
    min
}

/// Sample points on the boundary of `[-L, L]^d`.
fn boundary_points(d: usize, half_width: f64) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![-half_width], vec![half_width]],
        2 => {
            let per_edge = 65;
            let mut points = Vec::with_capacity(4 * per_edge);
            for i in 0..per_edge {
                let t = -half_width + 2.0 * half_width * i as f64 / (per_edge - 1) as f64;
                points.push(vec![-half_width, t]);
                points.push(vec![half_width, t]);
                points.push(vec![t, -half_width]);
                points.push(vec![t, half_width]);
            }
            points
        }
        _ => unreachable!("dimension checked at entry"),
    }
}

/// The ratio `integral(f exp(-U) phi) / integral(exp(-U) phi)` on a fixed
/// grid: `panels` Gauss-Legendre panels per position axis, the given
/// velocity rule, both integrals accumulated in one pass.
fn ratio_on_grid(
    model: &PotentialModel,
    f: &TestFunction,
    half_width: f64,
    u_min: f64,
    panels: usize,
    v_rule: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let d = model.dim();
    let (gl_nodes, gl_weights) = gauss_legendre_rule(PANEL_ORDER);

    // Per-axis panelized nodes and weights on [-L, L].
    let width = 2.0 * half_width / panels as f64;
    let mut axis_nodes = Vec::with_capacity(panels * PANEL_ORDER);
    let mut axis_weights = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let left = -half_width + p as f64 * width;
        let center = left + 0.5 * width;
        for (t, w) in gl_nodes.iter().zip(&gl_weights) {
            axis_nodes.push(center + 0.5 * width * t);
            axis_weights.push(0.5 * width * w);
        }
    }

    let per_axis = axis_nodes.len();
    let x_total = per_axis.pow(d as u32);
    let (v_nodes, v_weights) = v_rule;
    let v_total = v_nodes.len().pow(d as u32);

    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut num = Kahan::default();
    let mut den = Kahan::default();
    for flat_x in 0..x_total {
        let mut rem = flat_x;
        let mut wx = 1.0;
        for axis in 0..d {
            let i = rem % per_axis;
            rem /= per_axis;
            x[axis] = axis_nodes[i];
            wx *= axis_weights[i];
        }
        let density = (-(model.potential(&x) - u_min)).exp();
        if density == 0.0 {
            continue;
        }
        // Velocity average of f at this position and of the constant 1,
        // accumulated identically so constant test functions cancel exactly.
        let mut sum_f = Kahan::default();
        let mut sum_one = Kahan::default();
        for flat_v in 0..v_total {
            let mut rem = flat_v;
            let mut wv = 1.0;
            for axis in 0..d {
                let i = rem % v_nodes.len();
                rem /= v_nodes.len();
                v[axis] = v_nodes[i];
                wv *= v_weights[i];
            }
            sum_f.add(wv * f.eval(&x, &v));
            sum_one.add(wv);
        }
        num.add(wx * density * sum_f.value());
        den.add(wx * density * sum_one.value());
    }
    num.value() / den.value()
}

// ---------------------------------------------------------------------------
// Error sweeps.
// ---------------------------------------------------------------------------

/// One statistical-error sweep: ensembles of `trajectories` independent
/// paths per step size, each run for `round(total_time / h)` steps.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub integrator: IntegratorKind,
    pub dynamics: Dynamics,
    pub f: TestFunction,
    pub gamma: f64,
    pub h_grid: Vec<f64>,
    pub total_time: f64,
    pub trajectories: usize,
    pub master_seed: u64,
    pub initial_state: State,
    /// Simulated time discarded before averaging begins (default 0).
    pub burn_in_time: f64,
    pub quadrature: QuadratureOptions,
    /// Step cap forwarded to [`StepParams::with_max_step`]; the default
    /// [`crate::integrators::DEFAULT_MAX_STEP`] refuses coarse steps
    /// unless raised explicitly.
    pub step_cap: f64,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.h_grid.is_empty() {
            return Err(Error::InvalidParameter("sweep: h_grid must be non-empty".into()));
        }
        for &h in &self.h_grid {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "sweep: every step size must be positive and finite, got {h}"
                )));
            }
        }
        if self.trajectories < 2 {
            return Err(Error::InvalidParameter(format!(
                "sweep: at least 2 trajectories are required, got {}",
                self.trajectories
            )));
        }
        let h_max = self.h_grid.iter().cloned().fold(0.0, f64::max);
        if !(self.total_time >= h_max) || !self.total_time.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sweep: total_time {} must be finite and at least the largest step {h_max}",
                self.total_time
            )));
        }
        if !(self.burn_in_time >= 0.0) || !self.burn_in_time.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sweep: burn_in_time must be non-negative, got {}",
                self.burn_in_time
            )));
        }
        if !(self.step_cap > 0.0) || !self.step_cap.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sweep: step_cap must be positive and finite, got {}",
                self.step_cap
            )));
        }
        if self.initial_state.dim() != self.dynamics.dim() {
            return Err(Error::InvalidParameter(format!(
                "sweep: initial state dimension {} does not match model dimension {}",
                self.initial_state.dim(),
                self.dynamics.dim()
            )));
        }
        self.dynamics.check_kind(self.integrator)
    }
}

/// Per-step-size ensemble statistics of the time-average error.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub h: f64,
    pub n_steps: usize,
    /// Mean of `e^2` over surviving trajectories.
    pub mse: f64,
    /// Sample standard deviation of `e^2` divided by `sqrt(survivors)`.
    pub mse_stderr: f64,
    /// Mean of `e`.
    pub bias: f64,
    /// Unbiased sample variance of `e`.
    pub variance: f64,
    pub diverged_count: usize,
    pub survivors: usize,
}

/// Log-log least-squares fit of mse against h over a step-size window.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub cells_used: usize,
    pub floor_subtracted: bool,
}

/// Full sweep output: one [`CellStats`] per step size in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub cells: Vec<CellStats>,
    /// Mse at the smallest step size: the resolution-independent part of the
    /// error (the `1/T` plateau) under the sweep's own noise level.
    pub floor_estimate: f64,
    pub reference: ReferenceMean,
    /// Slope over a designated window, when a caller has fitted one.
    pub fitted: Option<SlopeFit>,
}

/// Ensemble statistics from raw per-trajectory errors; the arithmetic hook
/// behind [`run_sweep`], exposed so the definitions stay testable.
pub fn aggregate_cell(
    h: f64,
    n_steps: usize,
    errors: &[f64],
    diverged_count: usize,
) -> CellStats {
    debug_assert!(errors.len() >= 2, "aggregation needs at least two survivors");
    let m = errors.len() as f64;
    let bias = errors.iter().sum::<f64>() / m;
    let variance = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / (m - 1.0);
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / m;
    let spread = errors.iter().map(|e| (e * e - mse) * (e * e - mse)).sum::<f64>() / (m - 1.0);
    CellStats {
        h,
        n_steps,
        mse,
        mse_stderr: (spread / m).sqrt(),
        bias,
        variance,
        diverged_count,
        survivors: errors.len(),
    }
}

/// Runs the sweep: per step size, `trajectories` independent paths with
/// streams derived from the master seed and the trajectory index (the same
/// stream family in every cell, for common random numbers), reduced in
/// trajectory order. Deterministic given the config.
pub fn run_sweep(config: &SweepConfig) -> Result<ErrorReport> {
    config.validate()?;
    let reference = reference_mean(config.dynamics.potential(), &config.f, config.quadrature)?;

    // Validate every cell's step parameters before any work starts.
    let mut cell_params = Vec::with_capacity(config.h_grid.len());
    for &h in &config.h_grid {
        cell_params.push(StepParams::with_max_step(config.gamma, h, config.step_cap)?);
    }

    let mut cells = Vec::with_capacity(config.h_grid.len());
    for params in cell_params {
        let h = params.h();
        let n_steps = (config.total_time / h).round() as usize;
        let burn_in = (config.burn_in_time / h).round() as usize;
        let runs: Vec<std::result::Result<f64, Error>> = (0..config.trajectories)
            .into_par_iter()
            .map(|trajectory| {
                let mut stream = derive_stream(config.master_seed, trajectory as u64);
                simulate_time_average(
                    config.integrator,
                    &config.dynamics,
                    &params,
                    &config.f,
                    n_steps,
                    &config.initial_state,
                    burn_in,
                    &mut stream,
                )
                .map(|(avg, _)| avg)
            })
            .collect();

        let mut errors = Vec::with_capacity(config.trajectories);
        let mut diverged = 0usize;
        for run in runs {
            match run {
                Ok(avg) => errors.push(avg - reference.value),
                Err(Error::Divergence { .. }) => diverged += 1,
                Err(other) => return Err(other),
            }
        }
        if errors.len() < 2 {
            return Err(Error::TooFewSurvivors {
                h,
                survivors: errors.len(),
                total: config.trajectories,
            });
        }
        cells.push(aggregate_cell(h, n_steps, &errors, diverged));
    }

    let floor_estimate = cells
        .iter()
        .min_by(|a, b| a.h.total_cmp(&b.h))
        .map(|cell| cell.mse)
        .expect("validated non-empty grid");

    Ok(ErrorReport { cells, floor_estimate, reference, fitted: None })
}

/// Least-squares slope of `log mse` against `log h` over the inclusive
/// step-size window. With `subtract_floor`, the report's floor estimate is
/// removed from each cell first and cells driven nonpositive are excluded.
pub fn fit_slope(
    report: &ErrorReport,
    window: (f64, f64),
    subtract_floor: bool,
) -> Result<SlopeFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParameter(format!(
            "slope window must satisfy 0 < lo <= hi, got ({lo}, {hi})"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut in_window = 0usize;
    for cell in &report.cells {
        if cell.h < lo * (1.0 - 1e-9) || cell.h > hi * (1.0 + 1e-9) {
            continue;
        }
        in_window += 1;
        let y = if subtract_floor { cell.mse - report.floor_estimate } else { cell.mse };
        if y > 0.0 {
            xs.push(cell.h.ln());
            ys.push(y.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::FitWindow { need: 3, got: xs.len() });
    }
    let _ = in_window;
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(SlopeFit { slope, intercept, window, cells_used: xs.len(), floor_subtracted: subtract_floor })
}
