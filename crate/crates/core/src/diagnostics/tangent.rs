//! Tangent-flow and coupling contraction probes.
//!
//! The tangent flow `W_t = (Q_t, P_t)` of the dynamics along a trajectory
//! `(x_t, v_t)` solves the matrix variational equation
//!
//! ```text
//! dQ/dt = P,        dP/dt = -hess U(x_t) Q - gamma P,
//! ```
//!
//! and its decay rate in the norm `sqrt(H(W))`, with
//! `H(W) = gamma |Q|_F^2 + 2 tr(Q^T P) + |P|_F^2`, measures local
//! exponential contraction. The probes here integrate `W_t` with a
//! classical fourth-order Runge-Kutta rule between integrator steps (the
//! Hessian frozen at the step's starting position) and fit the decay.
//! Coupling variants drive two trajectories with identical Gaussian
//! increments and track either the tangent-flow difference or the plain
//! state gap `|dx| + |dv|`.

use crate::error::{Error, Result};
use crate::integrators::{ubu_step_with_noise, State, StepParams, UbuCoeffs, UbuNoise};
use crate::model::PotentialModel;
use crate::randomness::derive_stream;

use super::{fit_exponential_decay, DecayFit, DecayFitOptions};

/// A position/velocity pair of `d x d` row-major tangent matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentState {
    d: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl TangentState {
    pub fn new(d: usize, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != d * d || p.len() != d * d {
            return Err(Error::InvalidParameter(format!(
                "tangent state needs two {d}x{d} matrices, got lengths {} and {}",
                q.len(),
                p.len()
            )));
        }
        Ok(TangentState { d, q, p })
    }

    /// `Q = I, P = 0`: a pure position perturbation frame.
    pub fn identity_position(d: usize) -> Self {
        let mut q = vec![0.0; d * d];
        for i in 0..d {
            q[i * d + i] = 1.0;
        }
        TangentState { d, q, p: vec![0.0; d * d] }
    }

    /// `Q = 0, P = I`: a pure velocity perturbation frame.
    pub fn identity_velocity(d: usize) -> Self {
        let mut p = vec![0.0; d * d];
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        TangentState { d, q: vec![0.0; d * d], p }
    }

    pub fn zero(d: usize) -> Self {
        TangentState { d, q: vec![0.0; d * d], p: vec![0.0; d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `H(W) = gamma |Q|_F^2 + 2 tr(Q^T P) + |P|_F^2` (positive definite
    /// for `gamma > 1`).
    pub fn energy(&self, gamma: f64) -> f64 {
        let mut qq = 0.0;
        let mut qp = 0.0;
        let mut pp = 0.0;
        for (a, b) in self.q.iter().zip(&self.p) {
            qq += a * a;
            qp += a * b;
            pp += b * b;
        }
        gamma * qq + 2.0 * qp + pp
    }

    /// `sqrt(max(H(W), 0))`: the amplitude tracked by the decay probes.
    pub fn amplitude(&self, gamma: f64) -> f64 {
        self.energy(gamma).max(0.0).sqrt()
    }

    /// `|Q - Q'|_F + |P - P'|_F`.
    pub fn distance(&self, other: &TangentState) -> f64 {
        let frob = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        frob(&self.q, &other.q) + frob(&self.p, &other.p)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }
}

/// Runge-Kutta workspace for the tangent equation with a frozen Hessian.
struct TangentOde {
    gamma: f64,
    d: usize,
    hess: Vec<f64>,
    k_q: [Vec<f64>; 4],
    k_p: [Vec<f64>; 4],
    tmp_q: Vec<f64>,
    tmp_p: Vec<f64>,
}

fn tangent_rhs(
    hess: &[f64],
    gamma: f64,
    d: usize,
    q: &[f64],
    p: &[f64],
    dq: &mut [f64],
    dp: &mut [f64],
) {
    dq.copy_from_slice(p);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += hess[i * d + k] * q[k * d + j];
            }
            dp[i * d + j] = -s - gamma * p[i * d + j];
        }
    }
}

impl TangentOde {
    fn new(gamma: f64, d: usize) -> Self {
        let z = || vec![0.0; d * d];
        TangentOde {
            gamma,
            d,
            hess: z(),
            k_q: [z(), z(), z(), z()],
            k_p: [z(), z(), z(), z()],
            tmp_q: z(),
            tmp_p: z(),
        }
    }

    /// One classical RK4 step of size `dt` on `w`, Hessian held fixed.
    fn rk4_step(&mut self, w: &mut TangentState, dt: f64) {
        let n = self.d * self.d;
        tangent_rhs(&self.hess, self.gamma, self.d, &w.q, &w.p, &mut self.k_q[0], &mut self.k_p[0]);
        for stage in 1..4 {
            let c = if stage == 3 { dt } else { 0.5 * dt };
            for i in 0..n {
                self.tmp_q[i] = w.q[i] + c * self.k_q[stage - 1][i];
                self.tmp_p[i] = w.p[i] + c * self.k_p[stage - 1][i];
            }
            tangent_rhs(
                &self.hess,
                self.gamma,
                self.d,
                &self.tmp_q,
                &self.tmp_p,
                &mut self.k_q[stage],
                &mut self.k_p[stage],
            );
        }
        let w6 = dt / 6.0;
        for i in 0..n {
            w.q[i] += w6
                * (self.k_q[0][i] + 2.0 * self.k_q[1][i] + 2.0 * self.k_q[2][i] + self.k_q[3][i]);
            w.p[i] += w6
                * (self.k_p[0][i] + 2.0 * self.k_p[1][i] + 2.0 * self.k_p[2][i] + self.k_p[3][i]);
        }
    }

    fn advance(&mut self, w: &mut TangentState, span: f64, substeps: usize) {
        let dt = span / substeps as f64;
        for _ in 0..substeps {
            self.rk4_step(w, dt);
        }
    }
}

/// Configuration shared by the tangent probes.
#[derive(Clone, Debug)]
pub struct TangentProbeConfig {
    pub horizon: f64,
    pub state_step: f64,
    /// Runge-Kutta substeps per integrator step.
    pub ode_substeps: usize,
    pub seed: u64,
    pub initial_state: State,
}

impl TangentProbeConfig {
    pub fn new(horizon: f64, state_step: f64, initial_state: State) -> Self {
        TangentProbeConfig { horizon, state_step, ode_substeps: 4, seed: 0, initial_state }
    }
}

/// Amplitude series of one probe run plus its fitted decay.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentReport {
    /// `(t, sqrt(H(W_t)))` at every integrator step, starting at `t = 0`.
    pub series: Vec<(f64, f64)>,
    /// `None` when too little of the series rises above the fit floor.
    pub fit: Option<DecayFit>,
    pub initial: f64,
}

/// Gap series between two trajectories driven by identical noise.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingReport {
    pub series: Vec<(f64, f64)>,
    pub fit: Option<DecayFit>,
    pub initial_gap: f64,
    pub final_gap: f64,
}

/// Configuration of [`sync_coupling_probe`].
#[derive(Clone, Debug)]
pub struct CouplingConfig {
    pub horizon: f64,
    pub state_step: f64,
    pub seed: u64,
}

impl CouplingConfig {
    pub fn new(horizon: f64, state_step: f64) -> Self {
        CouplingConfig { horizon, state_step, seed: 0 }
    }
}

struct ProbePlan {
    n_steps: usize,
    coeffs: UbuCoeffs,
}

fn plan(gamma: f64, horizon: f64, state_step: f64, for_tangent: bool) -> Result<ProbePlan> {
    if for_tangent && !(gamma > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tangent probes need gamma > 1 so the tangent norm is positive definite, got {gamma}"
        )));
    }
    StepParams::new(gamma, state_step)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let n_steps = (horizon / state_step).round() as usize;
    if n_steps < 3 {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} covers only {n_steps} steps of size {state_step}; need at least 3"
        )));
    }
    Ok(ProbePlan { n_steps, coeffs: UbuCoeffs::new(gamma, state_step)? })
}

fn check_dim(model: &PotentialModel, state: &State, what: &str) -> Result<()> {
    if state.dim() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "{what} dimension {} does not match model dimension {}",
            state.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Tracks `sqrt(H(W_t))` along one trajectory and fits its exponential
/// decay. Requires the model's Hessian.
pub fn tangent_decay_probe(
    model: &PotentialModel,
    gamma: f64,
    init: &TangentState,
    config: &TangentProbeConfig,
) -> Result<TangentReport> {
    check_dim(model, &config.initial_state, "initial state")?;
    if init.dim() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "tangent frame dimension {} does not match model dimension {}",
            init.dim(),
            model.dim()
        )));
    }
    if config.ode_substeps == 0 {
        return Err(Error::InvalidParameter("ode_substeps must be positive".into()));
    }
    let plan = plan(gamma, config.horizon, config.state_step, true)?;
    let d = model.dim();
    let h = config.state_step;
    let mut state = config.initial_state.clone();
    let mut w = init.clone();
    let mut ode = TangentOde::new(gamma, d);
    let mut grad = vec![0.0; d];
    let mut stream = derive_stream(config.seed, 0);
    let initial = w.amplitude(gamma);
    let mut series = Vec::with_capacity(plan.n_steps + 1);
    series.push((0.0, initial));
    for step in 1..=plan.n_steps {
        model.hessian_into(&state.x, &mut ode.hess, "tangent decay probe")?;
        ode.advance(&mut w, h, config.ode_substeps);
        let noise = UbuNoise::draw(&plan.coeffs.chol, d, &mut stream);
        ubu_step_with_noise(
            &mut state,
            |x, out| model.grad_into(x, out),
            &plan.coeffs,
            h,
            &noise,
            &mut grad,
        );
        if !state.is_finite() || !w.is_finite() {
            return Err(Error::Divergence { step });
        }
        series.push((step as f64 * h, w.amplitude(gamma)));
    }
    let fit = fit_exponential_decay(
        &series,
        DecayFitOptions { floor: 1e-12 * initial, ..DecayFitOptions::default() },
    )
    .ok();
    Ok(TangentReport { series, fit, initial })
}

/// Runs two trajectories under identical noise, each carrying a tangent
/// frame driven by its own Hessian, and tracks the frame difference
/// `|dQ|_F + |dP|_F`; on position-independent Hessians the difference is
/// identically zero.
pub fn tangent_coupling_probe(
    model: &PotentialModel,
    gamma: f64,
    z0: &State,
    z0_other: &State,
    init: &TangentState,
    config: &TangentProbeConfig,
) -> Result<CouplingReport> {
    check_dim(model, z0, "first state")?;
    check_dim(model, z0_other, "second state")?;
    if init.dim() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "tangent frame dimension {} does not match model dimension {}",
            init.dim(),
            model.dim()
        )));
    }
    if config.ode_substeps == 0 {
        return Err(Error::InvalidParameter("ode_substeps must be positive".into()));
    }
    let plan = plan(gamma, config.horizon, config.state_step, true)?;
    let d = model.dim();
    let h = config.state_step;
    let mut state_a = z0.clone();
    let mut state_b = z0_other.clone();
    let mut w_a = init.clone();
    let mut w_b = init.clone();
    let mut ode = TangentOde::new(gamma, d);
    let mut grad = vec![0.0; d];
    let mut stream = derive_stream(config.seed, 0);
    let initial_gap = w_a.distance(&w_b);
    let mut series = Vec::with_capacity(plan.n_steps + 1);
    series.push((0.0, initial_gap));
    for step in 1..=plan.n_steps {
        model.hessian_into(&state_a.x, &mut ode.hess, "tangent coupling probe")?;
        ode.advance(&mut w_a, h, config.ode_substeps);
        model.hessian_into(&state_b.x, &mut ode.hess, "tangent coupling probe")?;
        ode.advance(&mut w_b, h, config.ode_substeps);
        let noise = UbuNoise::draw(&plan.coeffs.chol, d, &mut stream);
        for state in [&mut state_a, &mut state_b] {
            ubu_step_with_noise(
                state,
                |x, out| model.grad_into(x, out),
                &plan.coeffs,
                h,
                &noise,
                &mut grad,
            );
        }
        if !state_a.is_finite() || !state_b.is_finite() || !w_a.is_finite() || !w_b.is_finite() {
            return Err(Error::Divergence { step });
        }
        series.push((step as f64 * h, w_a.distance(&w_b)));
    }
    let fit = fit_exponential_decay(&series, DecayFitOptions::default()).ok();
    let final_gap = series.last().unwrap().1;
    Ok(CouplingReport { series, fit, initial_gap, final_gap })
}

/// Runs two trajectories under identical noise and tracks the state gap
/// `|dx| + |dv|`, fitting its exponential decay.
pub fn sync_coupling_probe(
    model: &PotentialModel,
    gamma: f64,
    z0: &State,
    z0_other: &State,
    config: &CouplingConfig,
) -> Result<CouplingReport> {
    check_dim(model, z0, "first state")?;
    check_dim(model, z0_other, "second state")?;
    let plan = plan(gamma, config.horizon, config.state_step, false)?;
    let d = model.dim();
    let h = config.state_step;
    let mut state_a = z0.clone();
    let mut state_b = z0_other.clone();
    let mut grad = vec![0.0; d];
    let mut stream = derive_stream(config.seed, 0);
    let gap = |a: &State, b: &State| {
        let norm = |u: &[f64], w: &[f64]| {
            u.iter().zip(w).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        norm(&a.x, &b.x) + norm(&a.v, &b.v)
    };
    let initial_gap = gap(&state_a, &state_b);
    let mut series = Vec::with_capacity(plan.n_steps + 1);
    series.push((0.0, initial_gap));
    for step in 1..=plan.n_steps {
        let noise = UbuNoise::draw(&plan.coeffs.chol, d, &mut stream);
        for state in [&mut state_a, &mut state_b] {
            ubu_step_with_noise(
                state,
                |x, out| model.grad_into(x, out),
                &plan.coeffs,
                h,
                &noise,
                &mut grad,
            );
        }
        if !state_a.is_finite() || !state_b.is_finite() {
            return Err(Error::Divergence { step });
        }
        series.push((step as f64 * h, gap(&state_a, &state_b)));
    }
    let fit = fit_exponential_decay(&series, DecayFitOptions::default()).ok();
    let final_gap = series.last().unwrap().1;
    Ok(CouplingReport { series, fit, initial_gap, final_gap })
}
