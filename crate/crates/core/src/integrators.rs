//! One-step maps and trajectory drivers for the underdamped Langevin
//! integrators.
//!
//! All schemes discretize
//!
//! ```text
//! dX = V dt,    dV = -grad U(X) dt - gamma V dt + sqrt(2 gamma) dB.
//! ```
//!
//! The Euler-Maruyama step is
//!
//! ```text
//! x' = x + h v
//! v' = v - h grad U(x) - gamma h v + sqrt(2 gamma h) xi,    xi ~ N(0, I)
//! ```
//!
//! and the splitting scheme composes an exact velocity Ornstein-Uhlenbeck
//! half-step, a full gradient kick, and another exact half-step
//! (`U(h/2) . B(h) . U(h/2)`), with each `U` substep over time `t` applying
//!
//! ```text
//! x <- x + F(t) v + xi_x,    v <- E(t) v + xi_v,
//! E(t) = exp(-gamma t),      F(t) = (1 - exp(-gamma t)) / gamma,
//! ```
//!
//! where `(xi_x, xi_v)` is the exact correlated Gaussian increment from
//! [`crate::randomness::ou_covariance`]. Stochastic-gradient variants replace
//! `grad U` with `b(x, omega)`, drawing one fresh `omega` per step *before*
//! the step's Gaussian noise — the draw order is part of the reproducibility
//! contract.

use crate::error::{Error, Result};
use crate::model::{PotentialModel, StochasticGradientModel, TestFunction};
use crate::randomness::{ou_covariance, OuCholesky, RngStream};

/// Position/velocity pair evolved by every integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(x.len(), v.len(), "State: position/velocity dimension mismatch");
        State { x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|a| a.is_finite()) && self.v.iter().all(|a| a.is_finite())
    }

    /// `|x| + |v|` (Euclidean norms), the radius the moment bounds use.
    pub fn radius(&self) -> f64 {
        let nx = self.x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = self.v.iter().map(|a| a * a).sum::<f64>().sqrt();
        nx + nv
    }
}

/// Integrator selector with its strong-order metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntegratorKind {
    Em,
    Ubu,
    SgEm,
    SgUbu,
}

/// Known integrator ids, for error messages and CLI help.
pub const KNOWN_INTEGRATORS: &str = "em, ubu, sg-em, sg-ubu";

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 4] =
        [IntegratorKind::Em, IntegratorKind::Ubu, IntegratorKind::SgEm, IntegratorKind::SgUbu];

    pub fn id(self) -> &'static str {
        match self {
            IntegratorKind::Em => "em",
            IntegratorKind::Ubu => "ubu",
            IntegratorKind::SgEm => "sg-em",
            IntegratorKind::SgUbu => "sg-ubu",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "em" => Ok(IntegratorKind::Em),
            "ubu" => Ok(IntegratorKind::Ubu),
            "sg-em" => Ok(IntegratorKind::SgEm),
            "sg-ubu" => Ok(IntegratorKind::SgUbu),
            _ => Err(Error::UnknownId {
                kind: "integrator",
                id: id.to_string(),
                known: KNOWN_INTEGRATORS,
            }),
        }
    }

    /// Strong order `(p, q)`: local error has a mean-zero part of size
    /// `h^{p+1/2}` and remainder `h^{p+1}`, with state-moment power `q`.
    pub fn strong_order(self) -> (u32, u32) {
        match self {
            IntegratorKind::Em | IntegratorKind::SgEm => (1, 1),
            IntegratorKind::Ubu | IntegratorKind::SgUbu => (2, 2),
        }
    }

    pub fn uses_stochastic_gradient(self) -> bool {
        matches!(self, IntegratorKind::SgEm | IntegratorKind::SgUbu)
    }
}

/// Default step-size cap; larger steps require an explicit override.
pub const DEFAULT_MAX_STEP: f64 = 0.5;

/// Validated damping rate and step size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    gamma: f64,
    h: f64,
}

impl StepParams {
    /// Validates `gamma > 0` and `0 <= h <=` [`DEFAULT_MAX_STEP`].
    pub fn new(gamma: f64, h: f64) -> Result<Self> {
        Self::with_max_step(gamma, h, DEFAULT_MAX_STEP)
    }

    /// As [`Self::new`] with an explicit step cap.
    pub fn with_max_step(gamma: f64, h: f64, h_max: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("step params: gamma must be positive, got {gamma}")));
        }
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("step params: h must be non-negative, got {h}")));
        }
        if h > h_max {
            return Err(Error::InvalidParameter(format!(
                "step params: h = {h} exceeds the step cap {h_max}; raise the cap explicitly to allow it"
            )));
        }
        Ok(StepParams { gamma, h })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Euler-Maruyama per-step Gaussian draw, `xi ~ N(0, I_d)`.
#[derive(Clone, Debug)]
pub struct EmNoise {
    pub xi: Vec<f64>,
}

impl EmNoise {
    pub fn draw(dim: usize, stream: &mut RngStream) -> Self {
        EmNoise { xi: (0..dim).map(|_| stream.standard_normal()).collect() }
    }

    pub fn zero(dim: usize) -> Self {
        EmNoise { xi: vec![0.0; dim] }
    }
}

/// Correlated OU increment of one half-step, per coordinate.
#[derive(Clone, Debug)]
pub struct UbuHalfNoise {
    pub xi_x: Vec<f64>,
    pub xi_v: Vec<f64>,
}

/// The two half-step increments one splitting step consumes, in order.
#[derive(Clone, Debug)]
pub struct UbuNoise {
    pub first: UbuHalfNoise,
    pub second: UbuHalfNoise,
}

impl UbuNoise {
    /// Draws both half-step increments (first half fully, then the second).
    pub fn draw(chol: &OuCholesky, dim: usize, stream: &mut RngStream) -> Self {
        let mut noise = UbuNoise::zero(dim);
        chol.sample_into(stream, &mut noise.first.xi_x, &mut noise.first.xi_v);
        chol.sample_into(stream, &mut noise.second.xi_x, &mut noise.second.xi_v);
        noise
    }

    pub fn zero(dim: usize) -> Self {
        UbuNoise {
            first: UbuHalfNoise { xi_x: vec![0.0; dim], xi_v: vec![0.0; dim] },
            second: UbuHalfNoise { xi_x: vec![0.0; dim], xi_v: vec![0.0; dim] },
        }
    }
}

/// Precomputed per-(gamma, h) coefficients of the splitting step.
#[derive(Clone, Copy, Debug)]
pub struct UbuCoeffs {
    /// `E(h/2)`.
    pub e_half: f64,
    /// `F(h/2)`.
    pub f_half: f64,
    /// Cholesky factor of the half-step OU increment covariance.
    pub chol: OuCholesky,
}

impl UbuCoeffs {
    pub fn new(gamma: f64, h: f64) -> Result<Self> {
        let half = 0.5 * h;
        let cov = ou_covariance(gamma, half)?;
        Ok(UbuCoeffs {
            e_half: (-gamma * half).exp(),
            f_half: -f64::exp_m1(-gamma * half) / gamma,
            chol: cov.cholesky(),
        })
    }
}

/// In-place Euler-Maruyama update from a pre-evaluated gradient at the
/// current position. Exposed so probes can drive two states with one noise.
#[inline]
pub fn em_step_with_noise(
    state: &mut State,
    grad: &[f64],
    params: &StepParams,
    noise: &EmNoise,
) {
    let h = params.h;
    let damp = 1.0 - params.gamma * h;
    let scale = (2.0 * params.gamma * h).sqrt();
    for c in 0..state.x.len() {
        state.x[c] += h * state.v[c];
        state.v[c] = damp * state.v[c] - h * grad[c] + scale * noise.xi[c];
    }
}

/// In-place splitting update `U(h/2) . B(h) . U(h/2)`; `grad_fn` is invoked
/// once, at the position after the first half-step, writing into `grad_buf`.
#[inline]
pub fn ubu_step_with_noise(
    state: &mut State,
    grad_fn: impl FnOnce(&[f64], &mut [f64]),
    coeffs: &UbuCoeffs,
    h: f64,
    noise: &UbuNoise,
    grad_buf: &mut [f64],
) {
    let d = state.x.len();
    for c in 0..d {
        state.x[c] += coeffs.f_half * state.v[c] + noise.first.xi_x[c];
        state.v[c] = coeffs.e_half * state.v[c] + noise.first.xi_v[c];
    }
    grad_fn(&state.x, grad_buf);
    for c in 0..d {
        state.v[c] -= h * grad_buf[c];
        state.x[c] += coeffs.f_half * state.v[c] + noise.second.xi_x[c];
        state.v[c] = coeffs.e_half * state.v[c] + noise.second.xi_v[c];
    }
}

/// Divergence check shared by the one-shot step wrappers.
fn finite_or_divergence(state: State, step: usize) -> Result<State> {
    if state.is_finite() {
        Ok(state)
    } else {
        Err(Error::Divergence { step })
    }
}

/// One Euler-Maruyama step, drawing its noise from `stream`.
pub fn em_step(
    state: &State,
    model: &PotentialModel,
    params: &StepParams,
    stream: &mut RngStream,
) -> Result<State> {
    let mut next = state.clone();
    let grad = model.grad(&state.x);
    let noise = EmNoise::draw(state.dim(), stream);
    em_step_with_noise(&mut next, &grad, params, &noise);
    finite_or_divergence(next, 1)
}

/// One splitting step, drawing its noise from `stream`.
pub fn ubu_step(
    state: &State,
    model: &PotentialModel,
    params: &StepParams,
    stream: &mut RngStream,
) -> Result<State> {
    let coeffs = UbuCoeffs::new(params.gamma, params.h)?;
    let mut next = state.clone();
    let mut grad = vec![0.0; state.dim()];
    let noise = UbuNoise::draw(&coeffs.chol, state.dim(), stream);
    ubu_step_with_noise(
        &mut next,
        |x, out| model.grad_into(x, out),
        &coeffs,
        params.h,
        &noise,
        &mut grad,
    );
    finite_or_divergence(next, 1)
}

/// One stochastic-gradient Euler-Maruyama step: a fresh `omega` replaces the
/// gradient, drawn before the Gaussian noise.
pub fn sgem_step(
    state: &State,
    sg: &StochasticGradientModel,
    params: &StepParams,
    stream: &mut RngStream,
) -> Result<State> {
    let mut next = state.clone();
    let omega = sg.sample_omega(stream);
    let grad = sg.gradient(&state.x, &omega);
    let noise = EmNoise::draw(state.dim(), stream);
    em_step_with_noise(&mut next, &grad, params, &noise);
    finite_or_divergence(next, 1)
}

/// One stochastic-gradient splitting step: one `omega` per full step (drawn
/// before the noise), used by the single gradient kick.
pub fn sgubu_step(
    state: &State,
    sg: &StochasticGradientModel,
    params: &StepParams,
    stream: &mut RngStream,
) -> Result<State> {
    let coeffs = UbuCoeffs::new(params.gamma, params.h)?;
    let mut next = state.clone();
    let mut grad = vec![0.0; state.dim()];
    let omega = sg.sample_omega(stream);
    let noise = UbuNoise::draw(&coeffs.chol, state.dim(), stream);
    ubu_step_with_noise(
        &mut next,
        |x, out| sg.gradient_into(x, &omega, out),
        &coeffs,
        params.h,
        &noise,
        &mut grad,
    );
    finite_or_divergence(next, 1)
}

/// The gradient source a trajectory runs against: a plain potential or a
/// stochastic-gradient surrogate over one.
#[derive(Clone, Debug)]
pub enum Dynamics {
    Full(PotentialModel),
    Stochastic(StochasticGradientModel),
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Full(m) => m.dim(),
            Dynamics::Stochastic(sg) => sg.dim(),
        }
    }

    /// The underlying potential (the base model for stochastic gradients).
    pub fn potential(&self) -> &PotentialModel {
        match self {
            Dynamics::Full(m) => m,
            Dynamics::Stochastic(sg) => sg.base(),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Dynamics::Full(m) => m.id(),
            Dynamics::Stochastic(sg) => sg.id(),
        }
    }

    /// Rejects mismatched integrator/gradient-source combinations.
    pub fn check_kind(&self, kind: IntegratorKind) -> Result<()> {
        match (kind.uses_stochastic_gradient(), self) {
            (false, Dynamics::Full(_)) | (true, Dynamics::Stochastic(_)) => Ok(()),
            (true, Dynamics::Full(m)) => Err(Error::InvalidParameter(format!(
                "integrator '{}' needs a stochastic-gradient model, got plain potential '{}'",
                kind.id(),
                m.id()
            ))),
            (false, Dynamics::Stochastic(sg)) => Err(Error::InvalidParameter(format!(
                "integrator '{}' needs a plain potential, got stochastic-gradient model '{}'",
                kind.id(),
                sg.id()
            ))),
        }
    }
}

/// Reusable per-trajectory stepping engine: buffers plus precomputed
/// coefficients, so long loops allocate nothing per step.
struct Stepper<'a> {
    kind: IntegratorKind,
    dynamics: &'a Dynamics,
    params: StepParams,
    coeffs: UbuCoeffs,
    grad: Vec<f64>,
    em_noise: EmNoise,
    ubu_noise: UbuNoise,
}

impl<'a> Stepper<'a> {
    fn new(kind: IntegratorKind, dynamics: &'a Dynamics, params: StepParams) -> Result<Self> {
        dynamics.check_kind(kind)?;
        let d = dynamics.dim();
        Ok(Stepper {
            kind,
            dynamics,
            params,
            coeffs: UbuCoeffs::new(params.gamma, params.h)?,
            grad: vec![0.0; d],
            em_noise: EmNoise::zero(d),
            ubu_noise: UbuNoise::zero(d),
        })
    }

    /// Advances `state` by one step, drawing from `stream`.
    #[inline]
    fn advance(&mut self, state: &mut State, stream: &mut RngStream) {
        match self.kind {
            IntegratorKind::Em => {
                match self.dynamics {
                    Dynamics::Full(m) => m.grad_into(&state.x, &mut self.grad),
                    Dynamics::Stochastic(_) => unreachable!("checked in new"),
                }
                redraw_em(&mut self.em_noise, stream);
                em_step_with_noise(state, &self.grad, &self.params, &self.em_noise);
            }
            IntegratorKind::SgEm => {
                let Dynamics::Stochastic(sg) = self.dynamics else {
                    unreachable!("checked in new")
                };
                let omega = sg.sample_omega(stream);
                sg.gradient_into(&state.x, &omega, &mut self.grad);
                redraw_em(&mut self.em_noise, stream);
                em_step_with_noise(state, &self.grad, &self.params, &self.em_noise);
            }
            IntegratorKind::Ubu => {
                let Dynamics::Full(m) = self.dynamics else { unreachable!("checked in new") };
                redraw_ubu(&mut self.ubu_noise, &self.coeffs.chol, stream);
                ubu_step_with_noise(
                    state,
                    |x, out| m.grad_into(x, out),
                    &self.coeffs,
                    self.params.h,
                    &self.ubu_noise,
                    &mut self.grad,
                );
            }
            IntegratorKind::SgUbu => {
                let Dynamics::Stochastic(sg) = self.dynamics else {
                    unreachable!("checked in new")
                };
                let omega = sg.sample_omega(stream);
                redraw_ubu(&mut self.ubu_noise, &self.coeffs.chol, stream);
                ubu_step_with_noise(
                    state,
                    |x, out| sg.gradient_into(x, &omega, out),
                    &self.coeffs,
                    self.params.h,
                    &self.ubu_noise,
                    &mut self.grad,
                );
            }
        }
    }
}

#[inline]
fn redraw_em(noise: &mut EmNoise, stream: &mut RngStream) {
    for xi in noise.xi.iter_mut() {
        *xi = stream.standard_normal();
    }
}

#[inline]
fn redraw_ubu(noise: &mut UbuNoise, chol: &OuCholesky, stream: &mut RngStream) {
    chol.sample_into(stream, &mut noise.first.xi_x, &mut noise.first.xi_v);
    chol.sample_into(stream, &mut noise.second.xi_x, &mut noise.second.xi_v);
}

/// Runs `n_steps` of the chosen integrator, invoking `on_state` after every
/// step with the 1-based step index and the new state. Returns the final
/// state; a non-finite state aborts with the offending step index.
pub fn run_steps(
    kind: IntegratorKind,
    dynamics: &Dynamics,
    params: &StepParams,
    initial: &State,
    n_steps: usize,
    stream: &mut RngStream,
    mut on_state: impl FnMut(usize, &State),
) -> Result<State> {
    let mut stepper = Stepper::new(kind, dynamics, *params)?;
    let mut state = initial.clone();
    for step in 1..=n_steps {
        stepper.advance(&mut state, stream);
        if !state.is_finite() {
            return Err(Error::Divergence { step });
        }
        on_state(step, &state);
    }
    Ok(state)
}

/// Streaming time average `(1/N) sum_{n=0}^{N-1} f(Z_n)` (the initial state
/// included, the final state excluded) with compensated accumulation, after
/// discarding `burn_in` steps. Returns the average and the final state
/// `Z_N`.
pub fn simulate_time_average(
    kind: IntegratorKind,
    dynamics: &Dynamics,
    params: &StepParams,
    f: &TestFunction,
    n_steps: usize,
    initial: &State,
    burn_in: usize,
    stream: &mut RngStream,
) -> Result<(f64, State)> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("time average needs at least one step".into()));
    }
    let mut stepper = Stepper::new(kind, dynamics, *params)?;
    let mut state = initial.clone();
    for step in 1..=burn_in {
        stepper.advance(&mut state, stream);
        if !state.is_finite() {
            return Err(Error::Divergence { step });
        }
    }
    // Kahan summation: the accumulated f values span many magnitudes over
    // long runs and the mean is the quantity under test.
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut add = |value: f64| {
        let y = value - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    };
    add(f.eval(&state.x, &state.v));
    for step in 1..n_steps {
        stepper.advance(&mut state, stream);
        if !state.is_finite() {
            return Err(Error::Divergence { step: burn_in + step });
        }
        add(f.eval(&state.x, &state.v));
    }
    // One more step to land on Z_N, which the sum excludes.
    stepper.advance(&mut state, stream);
    if !state.is_finite() {
        return Err(Error::Divergence { step: burn_in + n_steps });
    }
    Ok((sum / n_steps as f64, state))
}
