//! Quadratic Lyapunov drift and uniform moment-bound probes.
//!
//! The Lyapunov function is the positive definite (for `gamma > 1`)
//! quadratic form
//!
//! ```text
//! H(x, v) = gamma |x|^2 + 2 x.v + |v|^2   =   (x v) [[gamma, 1], [1, 1]] (x v)^T
//! ```
//!
//! whose generator drift under the dynamics has the closed form
//!
//! ```text
//! L H(x, v) = -2 ( (gamma - 1) |v|^2 + x . grad U(x) + v . grad U(x) ) + 2 gamma d.
//! ```
//!
//! [`lyapunov_drift_check`] searches for constants `a, b > 0` with
//! `L H <= -a H + b` over a state grid — the inequality behind uniform
//! moment bounds — by minimizing the non-contractive core radius `b / a`.
//! [`moment_stability_probe`] measures `E (|X_n| + |V_n| + 1)^{2r}` along
//! simulated ensembles and flags growth past a configured multiple of the
//! starting value.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{
    em_step_with_noise, ubu_step_with_noise, Dynamics, EmNoise, IntegratorKind, State,
    StepParams, UbuCoeffs, UbuNoise,
};
use crate::model::PotentialModel;
use crate::randomness::derive_stream;

/// The damping rate together with the quadratic-form views of `H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovParams {
    gamma: f64,
}

impl LyapunovParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Lyapunov form needs gamma > 0, got {gamma}"
            )));
        }
        Ok(LyapunovParams { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The block form `[[gamma, 1], [1, 1]]` is positive definite iff its
    /// determinant `gamma - 1` is positive.
    pub fn is_positive_definite(&self) -> bool {
        self.gamma > 1.0
    }

    /// `H(x, v) = gamma |x|^2 + 2 x.v + |v|^2`.
    pub fn energy(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut xx = 0.0;
        let mut xv = 0.0;
        let mut vv = 0.0;
        for (a, b) in x.iter().zip(v) {
            xx += a * a;
            xv += a * b;
            vv += b * b;
        }
        self.gamma * xx + 2.0 * xv + vv
    }
}

/// Closed-form generator drift `L H` at one state.
pub fn generator_drift(model: &PotentialModel, gamma: f64, x: &[f64], v: &[f64]) -> f64 {
    let grad = model.grad(x);
    let mut vv = 0.0;
    let mut xg = 0.0;
    let mut vg = 0.0;
    for c in 0..x.len() {
        vv += v[c] * v[c];
        xg += x[c] * grad[c];
        vg += v[c] * grad[c];
    }
    -2.0 * ((gamma - 1.0) * vv + xg + vg) + 2.0 * gamma * x.len() as f64
}

/// Outcome of the grid drift check `L H <= -a H + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftCheck {
    pub a: f64,
    pub b: f64,
    /// `b / a`: outside `H > b/a` the drift is strictly negative.
    pub core_radius: f64,
    pub feasible: bool,
    /// Indices of grid states that block feasibility (empty when feasible).
    pub violations: Vec<usize>,
    pub points_checked: usize,
}

/// The feasible interval of `a` at a fixed core radius `rho` (`b = a rho`):
/// each grid point demands `a (rho - H_i) >= L H_i`.
struct FeasibleInterval {
    a_lo: f64,
    a_hi: f64,
    blockers: Vec<usize>,
}

impl FeasibleInterval {
    fn is_feasible(&self) -> bool {
        self.blockers.is_empty() && self.a_lo < self.a_hi && self.a_hi > 0.0
    }
}

fn feasible_interval(energies: &[f64], drifts: &[f64], rho: f64) -> FeasibleInterval {
    let mut interval = FeasibleInterval { a_lo: 0.0, a_hi: f64::INFINITY, blockers: Vec::new() };
    for i in 0..energies.len() {
        let gap = rho - energies[i];
        if gap > 0.0 {
            if drifts[i] > 0.0 {
                interval.a_lo = interval.a_lo.max(drifts[i] / gap);
            }
        } else if drifts[i] >= 0.0 {
            // Non-negative drift at or beyond the candidate core: no a > 0
            // can dominate it.
            interval.blockers.push(i);
        } else if gap < 0.0 {
            interval.a_hi = interval.a_hi.min(drifts[i] / gap);
        }
    }
    interval
}

/// Finds drift constants on a grid of states: the smallest core radius
/// `rho = b/a` for which some `a > 0` satisfies `L H_i <= -a H_i + a rho`
/// at every grid point, searched by bisection (feasibility is monotone in
/// `rho`), then the largest `a` at that radius and its exact matching `b`.
///
/// Infeasibility — some state beyond the 0.9 energy quantile keeps a
/// non-negative drift — is reported as a finding, not an error.
pub fn lyapunov_drift_check(
    model: &PotentialModel,
    gamma: f64,
    grid: &[State],
) -> Result<DriftCheck> {
    let params = LyapunovParams::new(gamma)?;
    if !params.is_positive_definite() {
        return Err(Error::InvalidParameter(format!(
            "drift check needs gamma > 1 so the Lyapunov form is positive definite, got {gamma}"
        )));
    }
    if grid.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "drift check needs at least 3 grid states, got {}",
            grid.len()
        )));
    }
    let energies: Vec<f64> = grid.iter().map(|s| params.energy(&s.x, &s.v)).collect();
    let drifts: Vec<f64> =
        grid.iter().map(|s| generator_drift(model, gamma, &s.x, &s.v)).collect();

    // Cap the candidate core at the 0.9 energy quantile so at least a tenth
    // of the grid certifies contraction outside it.
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let rho_cap = sorted[((sorted.len() - 1) as f64 * 0.9).round() as usize].max(1e-9);

    let at_cap = feasible_interval(&energies, &drifts, rho_cap);
    if !at_cap.is_feasible() {
        let mut violations = at_cap.blockers;
        if violations.is_empty() {
            // The interval collapsed; report the extremal constraints.
            for i in 0..energies.len() {
                let gap = rho_cap - energies[i];
                if gap > 0.0 && drifts[i] > 0.0 && drifts[i] / gap >= at_cap.a_hi {
                    violations.push(i);
                } else if gap < 0.0 && drifts[i] / gap <= at_cap.a_lo {
                    violations.push(i);
                }
            }
        }
        return Ok(DriftCheck {
            a: 0.0,
            b: drifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0),
            core_radius: f64::INFINITY,
            feasible: false,
            violations,
            points_checked: grid.len(),
        });
    }

    let mut lo = 0.0f64;
    let mut hi = rho_cap;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if feasible_interval(&energies, &drifts, mid).is_feasible() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let interval = feasible_interval(&energies, &drifts, hi);
    let a = if interval.a_hi.is_finite() {
        0.5 * (interval.a_lo.max(0.0) + interval.a_hi)
    } else {
        interval.a_lo.max(0.0) + 1.0
    };
    // The exact smallest b for this a; every constraint holds by
    // construction, with equality at the arg max.
    let b = energies
        .iter()
        .zip(&drifts)
        .map(|(&e, &l)| l + a * e)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DriftCheck {
        a,
        b,
        core_radius: b / a,
        feasible: true,
        violations: Vec::new(),
        points_checked: grid.len(),
    })
}

/// Configuration of [`moment_stability_probe`].
#[derive(Clone, Debug)]
pub struct MomentProbeConfig {
    pub kind: IntegratorKind,
    pub gamma: f64,
    pub h: f64,
    /// Moment half-order: the probe tracks `E (|X| + |V| + 1)^{2r}`.
    pub r: u32,
    pub n_steps: usize,
    pub ensemble: usize,
    pub master_seed: u64,
    pub initial: State,
    /// Number of equally spaced checkpoints after the initial one.
    pub checkpoints: usize,
    /// Multiplier on the Gaussian increments; 0 gives the deterministic
    /// drift flow (a probe-only knob, not an integrator mode).
    pub noise_scale: f64,
    /// Flag the series when some checkpoint mean exceeds this multiple of
    /// the initial value.
    pub growth_cap: f64,
}

impl MomentProbeConfig {
    pub fn new(kind: IntegratorKind, gamma: f64, h: f64, initial: State) -> Self {
        MomentProbeConfig {
            kind,
            gamma,
            h,
            r: 2,
            n_steps: 10_000,
            ensemble: 100,
            master_seed: 0,
            initial,
            checkpoints: 50,
            noise_scale: 1.0,
            growth_cap: 50.0,
        }
    }
}

/// One checkpoint of the empirical moment curve.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentPoint {
    pub step: usize,
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
    pub survivors: usize,
}

/// Empirical `E (|X_n| + |V_n| + 1)^{2r}` at checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSeries {
    pub points: Vec<MomentPoint>,
    pub initial_value: f64,
    /// Largest checkpoint mean relative to the initial value.
    pub max_ratio: f64,
    pub flagged: bool,
    pub diverged_count: usize,
}

fn moment_value(state: &State, two_r: i32) -> f64 {
    (state.radius() + 1.0).powi(two_r)
}

/// Ensemble moment curve for the chosen integrator; trajectories that
/// diverge stop contributing from the failing checkpoint on and are
/// counted, not fatal.
pub fn moment_stability_probe(
    dynamics: &Dynamics,
    config: &MomentProbeConfig,
) -> Result<MomentSeries> {
    dynamics.check_kind(config.kind)?;
    if config.initial.dim() != dynamics.dim() {
        return Err(Error::InvalidParameter(format!(
            "moment probe: initial state dimension {} does not match model dimension {}",
            config.initial.dim(),
            dynamics.dim()
        )));
    }
    if config.ensemble == 0 || config.n_steps == 0 || config.checkpoints == 0 {
        return Err(Error::InvalidParameter(
            "moment probe: ensemble, n_steps, and checkpoints must be positive".into(),
        ));
    }
    if !(config.noise_scale >= 0.0) || !(config.growth_cap > 0.0) || config.r == 0 {
        return Err(Error::InvalidParameter(
            "moment probe: noise_scale >= 0, growth_cap > 0, r >= 1 required".into(),
        ));
    }
    let params = StepParams::new(config.gamma, config.h)?;
    let coeffs = UbuCoeffs::new(config.gamma, config.h)?;
    let two_r = 2 * config.r as i32;

    let n_checkpoints = config.checkpoints.min(config.n_steps);
    let checkpoint_steps: Vec<usize> =
        (0..=n_checkpoints).map(|k| k * config.n_steps / n_checkpoints).collect();

    let rows: Vec<Vec<Option<f64>>> = (0..config.ensemble)
        .into_par_iter()
        .map(|trajectory| {
            let mut stream = derive_stream(config.master_seed, trajectory as u64);
            let mut state = config.initial.clone();
            let d = state.dim();
            let mut grad = vec![0.0; d];
            let mut em_noise = EmNoise::zero(d);
            let mut ubu_noise = UbuNoise::zero(d);
            let mut row = Vec::with_capacity(checkpoint_steps.len());
            let mut alive = true;
            let mut next_checkpoint = 0usize;
            if checkpoint_steps[0] == 0 {
                row.push(Some(moment_value(&state, two_r)));
                next_checkpoint = 1;
            }
            for step in 1..=config.n_steps {
                if alive {
                    match config.kind {
                        IntegratorKind::Em | IntegratorKind::SgEm => {
                            match dynamics {
                                Dynamics::Full(m) => m.grad_into(&state.x, &mut grad),
                                Dynamics::Stochastic(sg) => {
                                    let omega = sg.sample_omega(&mut stream);
                                    sg.gradient_into(&state.x, &omega, &mut grad);
                                }
                            }
                            for xi in em_noise.xi.iter_mut() {
                                *xi = config.noise_scale * stream.standard_normal();
                            }
                            em_step_with_noise(&mut state, &grad, &params, &em_noise);
                        }
                        IntegratorKind::Ubu | IntegratorKind::SgUbu => {
                            let omega = match dynamics {
                                Dynamics::Full(_) => None,
                                Dynamics::Stochastic(sg) => Some(sg.sample_omega(&mut stream)),
                            };
                            coeffs.chol.sample_into(
                                &mut stream,
                                &mut ubu_noise.first.xi_x,
                                &mut ubu_noise.first.xi_v,
                            );
                            coeffs.chol.sample_into(
                                &mut stream,
                                &mut ubu_noise.second.xi_x,
                                &mut ubu_noise.second.xi_v,
                            );
                            if config.noise_scale != 1.0 {
                                for half in
                                    [&mut ubu_noise.first, &mut ubu_noise.second]
                                {
                                    for xi in half.xi_x.iter_mut() {
                                        *xi *= config.noise_scale;
                                    }
                                    for xi in half.xi_v.iter_mut() {
                                        *xi *= config.noise_scale;
                                    }
                                }
                            }
                            match (dynamics, omega) {
                                (Dynamics::Full(m), _) => ubu_step_with_noise(
                                    &mut state,
                                    |x, out| m.grad_into(x, out),
                                    &coeffs,
                                    params.h(),
                                    &ubu_noise,
                                    &mut grad,
                                ),
                                (Dynamics::Stochastic(sg), Some(omega)) => {
                                    ubu_step_with_noise(
                                        &mut state,
                                        |x, out| sg.gradient_into(x, &omega, out),
                                        &coeffs,
                                        params.h(),
                                        &ubu_noise,
                                        &mut grad,
                                    )
                                }
                                (Dynamics::Stochastic(_), None) => unreachable!(),
                            }
                        }
                    }
                    if !state.is_finite() {
                        alive = false;
                    }
                }
                if next_checkpoint < checkpoint_steps.len()
                    && step == checkpoint_steps[next_checkpoint]
                {
                    row.push(alive.then(|| moment_value(&state, two_r)));
                    next_checkpoint += 1;
                }
            }
            row
        })
        .collect();

    let initial_value = moment_value(&config.initial, two_r);
    let diverged_count = rows.iter().filter(|row| row.iter().any(Option::is_none)).count();
    let mut points = Vec::with_capacity(checkpoint_steps.len());
    for (k, &step) in checkpoint_steps.iter().enumerate() {
        let values: Vec<f64> = rows.iter().filter_map(|row| row[k]).collect();
        let survivors = values.len();
        let (mean, stderr) = if survivors == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let m = values.iter().sum::<f64>() / survivors as f64;
            let var = if survivors >= 2 {
                values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (survivors - 1) as f64
            } else {
                0.0
            };
            (m, (var / survivors as f64).sqrt())
        };
        points.push(MomentPoint {
            step,
            time: step as f64 * config.h,
            mean,
            stderr,
            survivors,
        });
    }
    let max_ratio = points
        .iter()
        .filter(|p| p.survivors > 0)
        .map(|p| p.mean / initial_value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentSeries {
        points,
        initial_value,
        max_ratio,
        flagged: max_ratio > config.growth_cap,
        diverged_count,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::integrators::ubu_step;
    use crate::model::{quadratic_potential, quadsine_potential, zero_potential};

    fn state_grid(half_width: f64, per_axis: usize) -> Vec<State> {
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64)
            .collect();
        let mut grid = Vec::with_capacity(per_axis * per_axis);
        for &x in &axis {
            for &v in &axis {
                grid.push(State::new(vec![x], vec![v]));
            }
        }
        grid
    }

    #[test]
    fn lyapunov_form_values_and_definiteness() {
        let p = LyapunovParams::new(2.0).unwrap();
        assert!(p.is_positive_definite());
        assert_eq!(p.energy(&[1.0], &[0.0]), 2.0);
        assert_eq!(p.energy(&[1.0], &[1.0]), 5.0);
        assert_eq!(p.energy(&[0.0], &[3.0]), 9.0);
        assert!(!LyapunovParams::new(1.0).unwrap().is_positive_definite());
        assert!(!LyapunovParams::new(0.5).unwrap().is_positive_definite());
        assert!(LyapunovParams::new(0.0).is_err());
    }

    #[test]
    fn generator_drift_closed_forms() {
        let m = quadsine_potential();
        // At v = 0 only the x.grad term and the constant survive:
        // -2 * 1 * (1 + cos 1) + 4 = 2 - 2 cos 1.
        let at_one = generator_drift(&m, 2.0, &[1.0], &[0.0]);
        assert_relative_eq!(at_one, 2.0 - 2.0 * 1.0f64.cos(), max_relative = 1e-14);
        // At the origin every state term vanishes: 2 gamma d.
        assert_eq!(generator_drift(&m, 2.0, &[0.0], &[0.0]), 4.0);
        let q2 = quadratic_potential(1.0, 2).unwrap();
        assert_eq!(generator_drift(&q2, 3.0, &[0.0, 0.0], &[0.0, 0.0]), 12.0);
        // Generic hand value: gamma = 2, (x, v) = (0.5, -1):
        // grad U = 0.5 + cos 0.5; LH = -2((1)(1) + 0.5g - g) + 4.
        let g = 0.5 + 0.5f64.cos();
        let expected = -2.0 * (1.0 + 0.5 * g - g) + 4.0;
        assert_relative_eq!(
            generator_drift(&m, 2.0, &[0.5], &[-1.0]),
            expected,
            max_relative = 1e-14
        );
        assert_relative_eq!(expected, 3.377_582_561_890_373, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_drift_matches_one_step_finite_difference() {
        // (E[H(z_delta)] - H(z)) / delta -> L H as delta -> 0; the exact
        // half-step noise makes the one-step weak error O(delta^2), so the
        // finite-difference bias is (delta/2) L^2 H + O(delta^2).
        let m = quadsine_potential();
        let dynamics = crate::integrators::Dynamics::Full(m.clone());
        let gamma = 2.0;
        let delta = 1e-3;
        let p = StepParams::new(gamma, delta).unwrap();
        let form = LyapunovParams::new(gamma).unwrap();
        let mut stream = derive_stream(50, 0);
        for (x0, v0) in [(0.3, -0.2), (1.0, 0.5), (-1.5, 1.2)] {
            let z = State::new(vec![x0], vec![v0]);
            let h0 = form.energy(&z.x, &z.v);
            let n = 100_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let z1 = ubu_step(&z, dynamics.potential(), &p, &mut stream).unwrap();
                let fd = (form.energy(&z1.x, &z1.v) - h0) / delta;
                sum += fd;
                sumsq += fd * fd;
            }
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let closed = generator_drift(&m, gamma, &z.x, &z.v);
            assert!(
                (mean - closed).abs() <= 3.0 * se + 0.15,
                "at ({x0}, {v0}): fd {mean} vs closed {closed}, se {se}"
            );
        }
    }

    #[test]
    fn quadratic_drift_check_is_feasible() {
        let m = quadratic_potential(1.0, 1).unwrap();
        let grid = state_grid(5.0, 21);
        let check = lyapunov_drift_check(&m, 3.0, &grid).unwrap();
        assert!(check.feasible);
        assert!(check.a > 0.0, "a = {}", check.a);
        assert!(check.b > 0.0, "b = {}", check.b);
        assert!(check.violations.is_empty());
        // The reported constants actually dominate the drift on the grid.
        let form = LyapunovParams::new(3.0).unwrap();
        for s in &grid {
            let lhs = generator_drift(&m, 3.0, &s.x, &s.v);
            let rhs = -check.a * form.energy(&s.x, &s.v) + check.b;
            assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
        }
        // The origin pins b at or above 2 gamma d.
        assert!(check.b >= 6.0 - 1e-9);
    }

    #[test]
    fn nonconvex_drift_check_is_feasible() {
        let m = quadsine_potential();
        let check = lyapunov_drift_check(&m, 2.0, &state_grid(6.0, 25)).unwrap();
        assert!(check.feasible, "violations at {:?}", check.violations);
        assert!(check.a > 0.0);
        assert!(check.core_radius.is_finite());
    }

    #[test]
    fn flat_potential_drift_check_is_infeasible() {
        // With no restoring force, states far out with v = 0 keep
        // L H = 2 gamma d > 0 while H grows: no a > 0 can work.
        let m = zero_potential(1);
        let check = lyapunov_drift_check(&m, 2.0, &state_grid(5.0, 21)).unwrap();
        assert!(!check.feasible);
        assert!(!check.violations.is_empty());
        assert_eq!(check.a, 0.0);
        assert!(check.core_radius.is_infinite());
    }

    #[test]
    fn drift_check_validates_inputs() {
        let m = quadratic_potential(1.0, 1).unwrap();
        assert!(lyapunov_drift_check(&m, 1.0, &state_grid(5.0, 5)).is_err());
        assert!(lyapunov_drift_check(&m, 2.0, &state_grid(5.0, 1)[..1].to_vec()).is_err());
    }

    #[test]
    fn moment_probe_initial_checkpoint_is_the_plug_in_value() {
        let dynamics = crate::integrators::Dynamics::Full(quadsine_potential());
        let mut config = MomentProbeConfig::new(
            IntegratorKind::Ubu,
            2.0,
            0.25,
            State::new(vec![0.2], vec![-0.3]),
        );
        config.n_steps = 200;
        config.ensemble = 50;
        config.master_seed = 51;
        let series = moment_stability_probe(&dynamics, &config).unwrap();
        // (0.2 + 0.3 + 1)^4 = 1.5^4 = 5.0625 exactly.
        assert_eq!(series.initial_value, 5.0625);
        assert_eq!(series.points[0].step, 0);
        assert_eq!(series.points[0].mean, 5.0625);
        assert_eq!(series.points[0].stderr, 0.0);
        assert_eq!(series.points[0].survivors, 50);
    }

    #[test]
    fn zero_noise_free_drift_keeps_the_moment_constant() {
        // With no force and no noise, x accumulates exactly what v loses:
        // |x_n| + |v_n| is conserved, so the moment curve is flat.
        let dynamics = crate::integrators::Dynamics::Full(zero_potential(1));
        let mut config =
            MomentProbeConfig::new(IntegratorKind::Em, 1.0, 0.1, State::new(vec![0.0], vec![1.0]));
        config.n_steps = 500;
        config.ensemble = 3;
        config.noise_scale = 0.0;
        config.checkpoints = 20;
        let series = moment_stability_probe(&dynamics, &config).unwrap();
        assert_eq!(series.initial_value, 16.0);
        for point in &series.points {
            assert_relative_eq!(point.mean, 16.0, max_relative = 1e-9);
        }
        assert!(series.max_ratio <= 1.0 + 1e-9);
        assert!(!series.flagged);
    }

    #[test]
    fn nonconvex_ensemble_moments_stay_bounded() {
        let dynamics = crate::integrators::Dynamics::Full(quadsine_potential());
        let mut config = MomentProbeConfig::new(
            IntegratorKind::Ubu,
            2.0,
            0.25,
            State::new(vec![0.2], vec![-0.3]),
        );
        config.n_steps = 2000;
        config.ensemble = 100;
        config.master_seed = 52;
        let series = moment_stability_probe(&dynamics, &config).unwrap();
        assert_eq!(series.diverged_count, 0);
        assert!(!series.flagged, "max ratio {}", series.max_ratio);
        assert!(series.points.iter().all(|p| p.survivors == 100));
        assert!(series.max_ratio >= 1.0);
    }

    #[test]
    fn divergent_trajectories_are_counted_not_fatal() {
        // Weak damping destabilizes the first-order scheme on the quadratic.
        let dynamics = crate::integrators::Dynamics::Full(quadratic_potential(1.0, 1).unwrap());
        let mut config =
            MomentProbeConfig::new(IntegratorKind::Em, 0.01, 0.5, State::new(vec![1.0], vec![1.0]));
        config.n_steps = 40_000;
        config.ensemble = 4;
        config.master_seed = 53;
        config.growth_cap = 1e12;
        let series = moment_stability_probe(&dynamics, &config).unwrap();
        assert_eq!(series.diverged_count, 4);
        assert_eq!(series.points.last().unwrap().survivors, 0);
    }
}
