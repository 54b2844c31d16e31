//! Potential models, test functions, and stochastic-gradient oracles with
//! machine-checkable assumption metadata.
//!
//! A potential `U: R^d -> R` defines the target law `exp(-U(x)) dx` in
//! position, paired with a standard Gaussian in velocity. Each model carries
//! the constants of the growth and drift conditions the error analysis
//! relies on:
//!
//! ```text
//! |grad U(x)|    <= c1 (|x| + 1)                   (gradient growth)
//! x . grad U(x)  >= m |x|^2 - c0                   (drift condition)
//! eig(hess U(x)) >= m   for |x| >= big_r           (convexity outside a ball)
//! ```
//!
//! [`check_assumptions`] verifies all three on a caller-supplied grid and
//! reports violations as data. Stochastic-gradient models provide a random
//! surrogate `b(x, omega)` with `E_omega b(x, omega) = grad U(x)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::randomness::RngStream;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Gradient of one component potential, used by mini-batch averaging.
pub type PartGradient = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A potential with evaluatable derivatives and assumption constants.
#[derive(Clone)]
pub struct PotentialModel {
    id: String,
    dim: usize,
    u: ScalarFn,
    grad: VectorFn,
    /// Row-major d x d second derivative, if available.
    hessian: Option<VectorFn>,
    m: f64,
    c1: f64,
    c0: f64,
    big_r: f64,
}

impl std::fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialModel")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("c1", &self.c1)
            .field("c0", &self.c0)
            .field("big_r", &self.big_r)
            .field("has_hessian", &self.hessian.is_some())
            .finish()
    }
}

impl PotentialModel {
    /// Builds a model from closures; constants default to the trivial
    /// `m = 0, c1 = 1, c0 = 0, big_r = 0` and should be set with
    /// [`Self::with_constants`].
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        u: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        PotentialModel {
            id: id.into(),
            dim,
            u: Arc::new(u),
            grad: Arc::new(grad),
            hessian: None,
            m: 0.0,
            c1: 1.0,
            c0: 0.0,
            big_r: 0.0,
        }
    }

    /// Attaches a row-major Hessian evaluator.
    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    /// Replaces the assumption constants (see module docs for their roles).
    pub fn with_constants(mut self, m: f64, c1: f64, c0: f64, big_r: f64) -> Self {
        self.m = m;
        self.c1 = c1;
        self.c0 = c0;
        self.big_r = big_r;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Convexity lower bound on Hessian eigenvalues outside `big_r`.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// Gradient growth constant.
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Drift offset.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Radius outside which the convexity bound applies.
    pub fn big_r(&self) -> f64 {
        self.big_r
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.u)(x)
    }

    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.grad)(x, out);
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        out
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    /// Evaluates the Hessian (row-major, length d*d) or reports which
    /// operation needed it.
    pub fn hessian_into(
        &self,
        x: &[f64],
        out: &mut [f64],
        operation: &'static str,
    ) -> Result<()> {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim * self.dim);
        match &self.hessian {
            Some(h) => {
                h(x, out);
                Ok(())
            }
            None => Err(Error::MissingHessian { model: self.id.clone(), operation }),
        }
    }
}

/// One-dimensional model `U(x) = x^2/2 + sin x`, the nonconvex benchmark:
/// `grad U = x + cos x`, `hess U = 1 - sin x` (touches zero, so `m = 0`).
pub fn quadsine_potential() -> PotentialModel {
    PotentialModel::new(
        "quadsine",
        1,
        |x: &[f64]| 0.5 * x[0] * x[0] + x[0].sin(),
        |x: &[f64], out: &mut [f64]| out[0] = x[0] + x[0].cos(),
    )
    .with_hessian(|x: &[f64], out: &mut [f64]| out[0] = 1.0 - x[0].sin())
    // |x + cos x| <= 2(|x|+1); x(x + cos x) >= x^2 - |x| >= -1/4 >= -2.
    .with_constants(0.0, 2.0, 2.0, 0.0)
}

/// Isotropic quadratic `U(x) = k|x|^2/2` in any dimension.
pub fn quadratic_potential(k: f64, dim: usize) -> Result<PotentialModel> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("quadratic potential: k must be positive, got {k}")));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("quadratic potential: dim must be at least 1".into()));
    }
    let id = if (k - 1.0).abs() < f64::EPSILON { "quadratic".to_string() } else { format!("quadratic:{k}") };
    Ok(PotentialModel::new(
        id,
        dim,
        move |x: &[f64]| 0.5 * k * x.iter().map(|xi| xi * xi).sum::<f64>(),
        move |x: &[f64], out: &mut [f64]| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = k * xi;
            }
        },
    )
    .with_hessian(move |_x: &[f64], out: &mut [f64]| {
        let d = (out.len() as f64).sqrt() as usize;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = k;
        }
    })
    .with_constants(k, k, 0.0, 0.0))
}

/// Free dynamics stub: `U = 0`, zero gradient, zero Hessian.
pub fn zero_potential(dim: usize) -> PotentialModel {
    PotentialModel::new("zero", dim, |_x: &[f64]| 0.0, |_x: &[f64], out: &mut [f64]| out.fill(0.0))
        .with_hessian(|_x: &[f64], out: &mut [f64]| out.fill(0.0))
        .with_constants(0.0, 1.0, 0.0, 0.0)
}

/// Known potential registry ids, for error messages and CLI help.
pub const KNOWN_POTENTIALS: &str = "quadsine, quadratic:<k>[:<dim>], zero";

/// Resolves a potential by registry id: `quadsine`, `quadratic:<k>` or
/// `quadratic:<k>:<dim>` (plain `quadratic` means k = 1, dim = 1), or
/// `zero`.
pub fn potential_from_id(id: &str) -> Result<PotentialModel> {
    if id == "quadsine" {
        return Ok(quadsine_potential());
    }
    if id == "zero" {
        return Ok(zero_potential(1));
    }
    if id == "quadratic" {
        return quadratic_potential(1.0, 1);
    }
    if let Some(rest) = id.strip_prefix("quadratic:") {
        let (kstr, dim) = match rest.split_once(':') {
            Some((kstr, dstr)) => {
                let dim: usize = dstr.parse().map_err(|_| {
                    Error::InvalidParameter(format!("quadratic potential: bad dimension '{dstr}'"))
                })?;
                (kstr, dim)
            }
            None => (rest, 1),
        };
        let k: f64 = kstr
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("quadratic potential: bad stiffness '{kstr}'")))?;
        return quadratic_potential(k, dim);
    }
    Err(Error::UnknownId { kind: "model", id: id.to_string(), known: KNOWN_POTENTIALS })
}

/// Observable `f(x, v)` with gradient and a derivative-growth constant.
#[derive(Clone)]
pub struct TestFunction {
    id: String,
    f: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    grad: Arc<dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync>,
    c2: f64,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("id", &self.id).field("c2", &self.c2).finish()
    }
}

impl TestFunction {
    pub fn new(
        id: impl Into<String>,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
        c2: f64,
    ) -> Self {
        TestFunction { id: id.into(), f: Arc::new(f), grad: Arc::new(grad), c2 }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Derivative growth constant: `|grad f(z)| <= c2 (|z| + 1)`.
    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> f64 {
        (self.f)(x, v)
    }

    /// Writes the position and velocity gradients of `f`.
    pub fn grad_into(&self, x: &[f64], v: &[f64], grad_x: &mut [f64], grad_v: &mut [f64]) {
        (self.grad)(x, v, grad_x, grad_v);
    }
}

/// Known observable ids, for error messages and CLI help.
pub const KNOWN_TEST_FUNCTIONS: &str = "x, x2, v, v2, const:<c>";

/// Resolves an observable by id: first position coordinate (`x`), its square
/// (`x2`), first velocity coordinate (`v`), its square (`v2`), or a constant
/// (`const:<c>`).
pub fn test_function_from_id(id: &str) -> Result<TestFunction> {
    match id {
        "x" => Ok(TestFunction::new(
            "x",
            |x: &[f64], _v: &[f64]| x[0],
            |_x: &[f64], _v: &[f64], gx: &mut [f64], gv: &mut [f64]| {
                gx.fill(0.0);
                gv.fill(0.0);
                gx[0] = 1.0;
            },
            1.0,
        )),
        "x2" => Ok(TestFunction::new(
            "x2",
            |x: &[f64], _v: &[f64]| x[0] * x[0],
            |x: &[f64], _v: &[f64], gx: &mut [f64], gv: &mut [f64]| {
                gx.fill(0.0);
                gv.fill(0.0);
                gx[0] = 2.0 * x[0];
            },
            2.0,
        )),
        "v" => Ok(TestFunction::new(
            "v",
            |_x: &[f64], v: &[f64]| v[0],
            |_x: &[f64], _v: &[f64], gx: &mut [f64], gv: &mut [f64]| {
                gx.fill(0.0);
                gv.fill(0.0);
                gv[0] = 1.0;
            },
            1.0,
        )),
        "v2" => Ok(TestFunction::new(
            "v2",
            |_x: &[f64], v: &[f64]| v[0] * v[0],
            |_x: &[f64], v: &[f64], gx: &mut [f64], gv: &mut [f64]| {
                gx.fill(0.0);
                gv.fill(0.0);
                gv[0] = 2.0 * v[0];
            },
            2.0,
        )),
        _ => {
            if let Some(cstr) = id.strip_prefix("const:") {
                let c: f64 = cstr.parse().map_err(|_| {
                    Error::InvalidParameter(format!("constant observable: bad value '{cstr}'"))
                })?;
                return Ok(TestFunction::new(
                    format!("const:{c}"),
                    move |_x: &[f64], _v: &[f64]| c,
                    |_x: &[f64], _v: &[f64], gx: &mut [f64], gv: &mut [f64]| {
                        gx.fill(0.0);
                        gv.fill(0.0);
                    },
                    0.0,
                ));
            }
            Err(Error::UnknownId { kind: "observable", id: id.to_string(), known: KNOWN_TEST_FUNCTIONS })
        }
    }
}

/// Randomness payload of one stochastic-gradient draw.
#[derive(Clone, Debug, PartialEq)]
pub enum Omega {
    /// Two scalar parameters.
    Pair(f64, f64),
    /// Mini-batch index subset, in selection order.
    Subset(Vec<usize>),
}

/// Unbiased random surrogate for a model's gradient.
#[derive(Clone)]
pub struct StochasticGradientModel {
    id: String,
    base: PotentialModel,
    /// Per-draw growth constant: `|b(x, omega)| <= growth_c1 (1 + |x|)`.
    growth_c1: f64,
    sample: Arc<dyn Fn(&mut RngStream) -> Omega + Send + Sync>,
    eval: Arc<dyn Fn(&[f64], &Omega, &mut [f64]) + Send + Sync>,
}

impl std::fmt::Debug for StochasticGradientModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticGradientModel")
            .field("id", &self.id)
            .field("base", &self.base)
            .field("growth_c1", &self.growth_c1)
            .finish()
    }
}

impl StochasticGradientModel {
    pub fn new(
        id: impl Into<String>,
        base: PotentialModel,
        growth_c1: f64,
        sample: impl Fn(&mut RngStream) -> Omega + Send + Sync + 'static,
        eval: impl Fn(&[f64], &Omega, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        StochasticGradientModel {
            id: id.into(),
            base,
            growth_c1,
            sample: Arc::new(sample),
            eval: Arc::new(eval),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base(&self) -> &PotentialModel {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn growth_c1(&self) -> f64 {
        self.growth_c1
    }

    /// Draws one gradient-noise realization.
    pub fn sample_omega(&self, stream: &mut RngStream) -> Omega {
        (self.sample)(stream)
    }

    /// Evaluates `b(x, omega)` into `out`.
    pub fn gradient_into(&self, x: &[f64], omega: &Omega, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.base.dim);
        (self.eval)(x, omega, out);
    }

    pub fn gradient(&self, x: &[f64], omega: &Omega) -> Vec<f64> {
        let mut out = vec![0.0; self.base.dim];
        self.gradient_into(x, omega, &mut out);
        out
    }
}

/// Stochastic gradient for [`quadsine_potential`]:
/// `b(x, omega) = omega1 x + omega2 + cos x` with
/// `omega1 ~ Uniform(0.2, 1.8)` and `omega2 ~ Normal(0, 0.4^2)`, independent.
/// `E b = x + cos x = grad U`. Draw order is fixed (omega1 first) as part of
/// the reproducibility contract.
///
/// The per-draw growth constant is 4 rather than the base model's 2: the
/// Gaussian `omega2` exceeds any fixed bound with tiny probability, and 4
/// covers it out to 7.5 standard deviations.
pub fn quadsine_stochastic_gradient() -> StochasticGradientModel {
    StochasticGradientModel::new(
        "quadsine",
        quadsine_potential(),
        4.0,
        |stream: &mut RngStream| {
            let omega1 = stream.uniform(0.2, 1.8);
            let omega2 = 0.4 * stream.standard_normal();
            Omega::Pair(omega1, omega2)
        },
        |x: &[f64], omega: &Omega, out: &mut [f64]| {
            let Omega::Pair(omega1, omega2) = omega else {
                panic!("quadsine stochastic gradient got a non-pair omega");
            };
            out[0] = omega1 * x[0] + omega2 + x[0].cos();
        },
    )
}

/// Uniform size-`k` subset of `0..n` without replacement, in selection order,
/// via partial Fisher-Yates on the index array.
pub fn sample_index_subset(n: usize, k: usize, stream: &mut RngStream) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("subset size {k} out of range 1..={n}")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + stream.index_below(n - i);
        indices.swap(i, j);
    }
    indices.truncate(k);
    Ok(indices)
}

/// Mini-batch gradient estimate: averages a uniformly drawn size-`batch`
/// subset of the component gradients. Unbiased for the full average.
pub fn minibatch_gradient(
    parts: &[PartGradient],
    batch: usize,
    stream: &mut RngStream,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let subset = sample_index_subset(parts.len(), batch, stream)?;
    average_parts(parts, &subset, x, out);
    Ok(())
}

/// Averages the selected component gradients into `out`.
fn average_parts(parts: &[PartGradient], subset: &[usize], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let mut term = vec![0.0; out.len()];
    for &j in subset {
        parts[j](x, &mut term);
        for (o, t) in out.iter_mut().zip(&term) {
            *o += t;
        }
    }
    let scale = 1.0 / subset.len() as f64;
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Mini-batch stochastic gradient over `n_parts` scaled copies of the unit
/// quadratic: part `j` has gradient `a_j x` with the `a_j` spread linearly
/// over `[1 - spread, 1 + spread]` and averaging to exactly 1, so the
/// full-batch gradient is `x` and any batch size is unbiased for it. A
/// spread above 1 makes some parts concave (their slopes go negative) while
/// the averaged potential stays the unit quadratic — the high-noise regime
/// where gradient noise dominates discretization error.
pub fn minibatch_quadratic_stochastic_gradient(
    n_parts: usize,
    batch: usize,
    spread: f64,
) -> Result<StochasticGradientModel> {
    if n_parts == 0 {
        return Err(Error::InvalidParameter("mini-batch model: need at least one part".into()));
    }
    if batch == 0 || batch > n_parts {
        return Err(Error::InvalidParameter(format!(
            "mini-batch model: batch size {batch} out of range 1..={n_parts}"
        )));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mini-batch model: spread must be finite and non-negative, got {spread}"
        )));
    }
    let slopes = part_slopes(n_parts, spread);
    let base = quadratic_potential(1.0, 1)?;
    let id = if spread == DEFAULT_SLOPE_SPREAD {
        format!("minibatch-quadratic:{n_parts},{batch}")
    } else {
        format!("minibatch-quadratic:{n_parts},{batch},{spread}")
    };
    Ok(StochasticGradientModel::new(
        id,
        base,
        1.0 + spread,
        move |stream: &mut RngStream| {
            Omega::Subset(sample_index_subset(n_parts, batch, stream).expect("validated batch size"))
        },
        move |x: &[f64], omega: &Omega, out: &mut [f64]| {
            let Omega::Subset(subset) = omega else {
                panic!("mini-batch stochastic gradient got a non-subset omega");
            };
            let mean_slope: f64 =
                subset.iter().map(|&j| slopes[j]).sum::<f64>() / subset.len() as f64;
            out[0] = mean_slope * x[0];
        },
    ))
}

/// Slope half-range giving the historical `[0.5, 1.5]` component family.
pub const DEFAULT_SLOPE_SPREAD: f64 = 0.5;

/// Component slopes for the mini-batch quadratic: symmetric around 1.
fn part_slopes(n_parts: usize, spread: f64) -> Vec<f64> {
    if n_parts == 1 {
        return vec![1.0];
    }
    (0..n_parts)
        .map(|j| 1.0 + spread * (2.0 * j as f64 - (n_parts as f64 - 1.0)) / (n_parts as f64 - 1.0))
        .collect()
}

/// Known stochastic-gradient registry ids.
pub const KNOWN_STOCHASTIC_GRADIENTS: &str = "quadsine, minibatch-quadratic:<parts>,<batch>[,<spread>]";

/// Resolves a stochastic-gradient model by registry id.
pub fn stochastic_gradient_from_id(id: &str) -> Result<StochasticGradientModel> {
    if id == "quadsine" {
        return Ok(quadsine_stochastic_gradient());
    }
    if let Some(rest) = id.strip_prefix("minibatch-quadratic:") {
        let (mstr, rest) = rest.split_once(',').ok_or_else(|| {
            Error::InvalidParameter(format!(
                "mini-batch model: expected <parts>,<batch>[,<spread>], got '{rest}'"
            ))
        })?;
        let (bstr, sstr) = match rest.split_once(',') {
            Some((bstr, sstr)) => (bstr, Some(sstr)),
            None => (rest, None),
        };
        let n_parts: usize = mstr.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("mini-batch model: bad part count '{mstr}'"))
        })?;
        let batch: usize = bstr.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("mini-batch model: bad batch size '{bstr}'"))
        })?;
        let spread: f64 = match sstr {
            Some(s) => s.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("mini-batch model: bad slope spread '{s}'"))
            })?,
            None => DEFAULT_SLOPE_SPREAD,
        };
        return minibatch_quadratic_stochastic_gradient(n_parts, batch, spread);
    }
    Err(Error::UnknownId {
        kind: "stochastic gradient",
        id: id.to_string(),
        known: KNOWN_STOCHASTIC_GRADIENTS,
    })
}

/// Per-point outcome of an assumption check that failed somewhere.
#[derive(Clone, Debug)]
pub struct AssumptionFailure {
    pub point: Vec<f64>,
    pub growth_ok: bool,
    pub drift_ok: bool,
    /// `None` when the model has no Hessian.
    pub hessian_ok: Option<bool>,
}

/// Aggregate result of [`check_assumptions`]; failures are data, not errors.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub model: String,
    pub points_checked: usize,
    pub growth_pass: bool,
    pub drift_pass: bool,
    /// `None` when the model has no Hessian (check skipped).
    pub hessian_pass: Option<bool>,
    pub failures: Vec<AssumptionFailure>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.growth_pass && self.drift_pass && self.hessian_pass.unwrap_or(true)
    }
}

/// Verifies the growth, drift, and convexity conditions of the module docs
/// at every grid point, using the model's stored constants.
pub fn check_assumptions(model: &PotentialModel, grid: &[Vec<f64>]) -> Result<AssumptionReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("check_assumptions: empty grid".into()));
    }
    let d = model.dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut report = AssumptionReport {
        model: model.id().to_string(),
        points_checked: grid.len(),
        growth_pass: true,
        drift_pass: true,
        hessian_pass: if model.has_hessian() { Some(true) } else { None },
        failures: Vec::new(),
    };
    for point in grid {
        if point.len() != d {
            return Err(Error::InvalidParameter(format!(
                "check_assumptions: point of dim {} in a dim-{d} model",
                point.len()
            )));
        }
        model.grad_into(point, &mut grad);
        let norm_x = point.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_g = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dot: f64 = point.iter().zip(&grad).map(|(a, b)| a * b).sum();

        let growth_ok = norm_g <= model.c1() * (norm_x + 1.0) * (1.0 + 1e-12) + 1e-12;
        let drift_ok =
            dot >= model.m() * norm_x * norm_x - model.c0() - 1e-9 * (1.0 + norm_x * norm_x);
        let hessian_ok = if model.has_hessian() {
            if norm_x >= model.big_r() {
                model
                    .hessian_into(point, &mut hess, "assumption check")
                    .expect("hessian presence already checked");
                Some(min_symmetric_eigenvalue(&hess, d) >= model.m() - 1e-9)
            } else {
                Some(true)
            }
        } else {
            None
        };

        report.growth_pass &= growth_ok;
        report.drift_pass &= drift_ok;
        if let (Some(pass), Some(ok)) = (report.hessian_pass.as_mut(), hessian_ok) {
            *pass &= ok;
        }
        if !growth_ok || !drift_ok || hessian_ok == Some(false) {
            report.failures.push(AssumptionFailure {
                point: point.clone(),
                growth_ok,
                drift_ok,
                hessian_ok,
            });
        }
    }
    Ok(report)
}

/// Smallest eigenvalue of a row-major symmetric matrix.
fn min_symmetric_eigenvalue(matrix: &[f64], d: usize) -> f64 {
    if d == 1 {
        return matrix[0];
    }
    // Symmetrize defensively before the decomposition.
    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = 0.5 * (matrix[i * d + j] + matrix[j * d + i]);
        }
    }
    m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Tensor grid of positions with `per_axis` points per axis spanning
/// `[lo, hi]` in every coordinate (endpoints included).
pub fn position_grid(lo: f64, hi: f64, per_axis: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(per_axis >= 1 && dim >= 1, "position_grid: degenerate shape");
    let axis: Vec<f64> = if per_axis == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..per_axis)
            .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
            .collect()
    };
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &a in &axis {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_relative_eq;

    use super::*;
    use crate::randomness::derive_stream;

    #[test]
    fn quadsine_closed_form_values() {
        let m = quadsine_potential();
        assert_eq!(m.potential(&[0.0]), 0.0);
        assert_eq!(m.grad(&[0.0])[0], 1.0);
        assert_relative_eq!(m.grad(&[PI])[0], PI - 1.0, max_relative = 1e-15);
        let mut h = [0.0];
        m.hessian_into(&[PI / 2.0], &mut h, "test").unwrap();
        assert!(h[0].abs() < 1e-15);
    }

    #[test]
    fn quadsine_constants_hold_on_a_wide_grid() {
        let m = quadsine_potential();
        let grid = position_grid(-50.0, 50.0, 2001, 1);
        let report = check_assumptions(&m, &grid).unwrap();
        assert!(report.all_pass(), "failures: {:?}", report.failures.first());
        assert_eq!(report.hessian_pass, Some(true));
        assert_eq!(report.points_checked, 2001);
    }

    #[test]
    fn tightened_constants_fail_the_drift_check() {
        // With m = 0.5 the drift needs x.grad >= 0.5 x^2 - c0, which fails
        // near x = -0.6 when c0 is too small; the report carries the point.
        let m = quadsine_potential().with_constants(0.5, 2.0, 0.1, 0.0);
        let grid = position_grid(-5.0, 5.0, 201, 1);
        let report = check_assumptions(&m, &grid).unwrap();
        assert!(!report.drift_pass);
        assert!(report.growth_pass);
        assert!(!report.all_pass());
        assert!(report.failures.iter().any(|f| !f.drift_ok));
    }

    #[test]
    fn quadratic_closed_form_values() {
        let m = quadratic_potential(1.0, 2).unwrap();
        assert_eq!(m.grad(&[2.0, 0.0]), vec![2.0, 0.0]);
        assert_eq!(m.potential(&[1.0, 1.0]), 1.0);

        let m2 = quadratic_potential(2.0, 2).unwrap();
        let mut h = [0.0; 4];
        m2.hessian_into(&[0.3, -0.7], &mut h, "test").unwrap();
        assert_eq!(h, [2.0, 0.0, 0.0, 2.0]);

        let report = check_assumptions(&m, &position_grid(-5.0, 5.0, 21, 2)).unwrap();
        assert!(report.all_pass());
    }

    #[test]
    fn quadratic_rejects_bad_stiffness() {
        assert!(quadratic_potential(0.0, 1).is_err());
        assert!(quadratic_potential(-2.0, 1).is_err());
        assert!(quadratic_potential(1.0, 0).is_err());
    }

    #[test]
    fn registry_resolves_and_rejects() {
        assert_eq!(potential_from_id("quadsine").unwrap().id(), "quadsine");
        assert_eq!(potential_from_id("quadratic").unwrap().m(), 1.0);
        assert_eq!(potential_from_id("quadratic:2.5").unwrap().m(), 2.5);
        let planar = potential_from_id("quadratic:1:2").unwrap();
        assert_eq!(planar.dim(), 2);
        assert_eq!(planar.m(), 1.0);
        assert_eq!(potential_from_id("quadratic:0.5:3").unwrap().dim(), 3);
        assert_eq!(potential_from_id("zero").unwrap().id(), "zero");
        assert!(matches!(potential_from_id("bogus"), Err(Error::UnknownId { .. })));
        assert!(potential_from_id("quadratic:abc").is_err());
        assert!(potential_from_id("quadratic:1:zz").is_err());
        assert!(potential_from_id("quadratic:1:0").is_err());

        assert_eq!(stochastic_gradient_from_id("quadsine").unwrap().id(), "quadsine");
        assert_eq!(
            stochastic_gradient_from_id("minibatch-quadratic:5,2").unwrap().id(),
            "minibatch-quadratic:5,2"
        );
        assert_eq!(
            stochastic_gradient_from_id("minibatch-quadratic:2,1,2").unwrap().id(),
            "minibatch-quadratic:2,1,2"
        );
        assert!(stochastic_gradient_from_id("minibatch-quadratic:5").is_err());
        assert!(stochastic_gradient_from_id("minibatch-quadratic:0,1").is_err());
        assert!(stochastic_gradient_from_id("minibatch-quadratic:2,1,-1").is_err());
        assert!(stochastic_gradient_from_id("minibatch-quadratic:2,1,huge").is_err());
        assert!(matches!(stochastic_gradient_from_id("bogus"), Err(Error::UnknownId { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Central differences of the potential agree with the coded gradient
        // at 100 random points per model.
        let models =
            [quadsine_potential(), quadratic_potential(2.0, 2).unwrap(), zero_potential(3)];
        let mut stream = derive_stream(11, 0);
        let eps = 1e-5;
        for model in &models {
            let d = model.dim();
            let mut grad = vec![0.0; d];
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| stream.uniform(-5.0, 5.0)).collect();
                model.grad_into(&x, &mut grad);
                for c in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += eps;
                    xm[c] -= eps;
                    let fd = (model.potential(&xp) - model.potential(&xm)) / (2.0 * eps);
                    assert!(
                        (fd - grad[c]).abs() <= 1e-6 * grad[c].abs().max(1.0),
                        "{}: coord {c} at {x:?}: fd {fd} vs grad {}",
                        model.id(),
                        grad[c]
                    );
                }
            }
        }
    }

    #[test]
    fn hessians_match_gradient_differences() {
        let models = [quadsine_potential(), quadratic_potential(2.0, 2).unwrap()];
        let mut stream = derive_stream(12, 0);
        let eps = 1e-5;
        for model in &models {
            let d = model.dim();
            let mut hess = vec![0.0; d * d];
            let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
            for _ in 0..50 {
                let x: Vec<f64> = (0..d).map(|_| stream.uniform(-5.0, 5.0)).collect();
                model.hessian_into(&x, &mut hess, "test").unwrap();
                for c in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += eps;
                    xm[c] -= eps;
                    model.grad_into(&xp, &mut gp);
                    model.grad_into(&xm, &mut gm);
                    for r in 0..d {
                        let fd = (gp[r] - gm[r]) / (2.0 * eps);
                        let coded = hess[r * d + c];
                        assert!(
                            (fd - coded).abs() <= 1e-6 * coded.abs().max(1.0),
                            "{}: entry ({r},{c}) at {x:?}",
                            model.id()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn missing_hessian_is_reported() {
        let bare = PotentialModel::new("bare", 1, |_| 0.0, |_, out| out.fill(0.0));
        let mut h = [0.0];
        let err = bare.hessian_into(&[0.0], &mut h, "tangent probe").unwrap_err();
        assert!(matches!(err, Error::MissingHessian { .. }));
        let report = check_assumptions(&bare, &position_grid(-1.0, 1.0, 5, 1)).unwrap();
        assert_eq!(report.hessian_pass, None);
        assert!(report.all_pass());
    }

    #[test]
    fn stochastic_gradient_point_values() {
        let sg = quadsine_stochastic_gradient();
        assert_eq!(sg.gradient(&[0.0], &Omega::Pair(1.0, 0.0))[0], 1.0);
        // b is affine in omega with E omega1 = 1, E omega2 = 0.
        let g = sg.gradient(&[2.0], &Omega::Pair(1.0, 0.0))[0];
        assert_relative_eq!(g, 2.0 + 2.0f64.cos(), max_relative = 1e-15);
    }

    #[test]
    fn stochastic_gradient_is_unbiased_on_a_grid() {
        let sg = quadsine_stochastic_gradient();
        let mut stream = derive_stream(13, 0);
        let n = 100_000;
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let target = sg.base().grad(&[x])[0];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let omega = sg.sample_omega(&mut stream);
                let b = sg.gradient(&[x], &omega)[0];
                sum += b;
                sum_sq += b * b;
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "x = {x}: mean {mean} vs grad {target} (se {se})"
            );
        }
    }

    #[test]
    fn stochastic_gradient_variance_at_origin() {
        // At x = 0 the omega1 term vanishes, so Var b(0, .) = Var omega2 = 0.16.
        let sg = quadsine_stochastic_gradient();
        let mut stream = derive_stream(14, 0);
        let n = 100_000;
        let draws: Vec<f64> =
            (0..n).map(|_| sg.gradient(&[0.0], &sg.sample_omega(&mut stream))[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n as f64 - 1.0);
        // 3 standard errors of a Gaussian sample variance: 0.16 sqrt(2/n).
        assert!((var - 0.16).abs() < 3.0 * 0.16 * (2.0 / n as f64).sqrt(), "var = {var}");
    }

    #[test]
    fn stochastic_gradient_growth_bound_holds() {
        let sg = quadsine_stochastic_gradient();
        let mut stream = derive_stream(15, 0);
        for x in [-4.0, -1.0, 0.0, 0.5, 2.0] {
            for _ in 0..20_000 {
                let b = sg.gradient(&[x], &sg.sample_omega(&mut stream))[0];
                assert!(b.abs() <= sg.growth_c1() * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn full_batch_and_identical_parts_are_exact() {
        let parts: Vec<PartGradient> = vec![
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0]),
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]),
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 3.0 * x[0]),
        ];
        let mut stream = derive_stream(16, 0);
        let mut out = [0.0];
        minibatch_gradient(&parts, 3, &mut stream, &[1.5], &mut out).unwrap();
        assert_relative_eq!(out[0], 3.0, max_relative = 1e-15);

        let same: Vec<PartGradient> = (0..4)
            .map(|_| Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 1.3 * x[0]) as PartGradient)
            .collect();
        minibatch_gradient(&same, 2, &mut stream, &[2.0], &mut out).unwrap();
        assert_eq!(out[0], 2.6);
    }

    #[test]
    fn minibatch_single_draw_mean_matches_enumeration() {
        // Parts {x, 2x, 3x} with B = 1 at x = 1: outcomes {1, 2, 3}, mean 2.
        let parts: Vec<PartGradient> = vec![
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0]),
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]),
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 3.0 * x[0]),
        ];
        let mut stream = derive_stream(17, 0);
        let n = 30_000;
        let mut sum = 0.0;
        let mut out = [0.0];
        for _ in 0..n {
            minibatch_gradient(&parts, 1, &mut stream, &[1.0], &mut out).unwrap();
            sum += out[0];
        }
        let mean = sum / n as f64;
        let se = (2.0f64 / 3.0 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn minibatch_rejects_bad_batch_sizes() {
        let parts: Vec<PartGradient> =
            vec![Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0])];
        let mut stream = derive_stream(18, 0);
        let mut out = [0.0];
        assert!(minibatch_gradient(&parts, 0, &mut stream, &[1.0], &mut out).is_err());
        assert!(minibatch_gradient(&parts, 2, &mut stream, &[1.0], &mut out).is_err());
    }

    #[test]
    fn subsets_are_uniform() {
        // M = 5, B = 2: all 10 unordered pairs appear with frequency
        // 0.1 within 3 binomial standard deviations.
        let mut stream = derive_stream(19, 0);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let mut s = sample_index_subset(5, 2, &mut stream).unwrap();
            s.sort_unstable();
            *counts.entry((s[0], s[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        let sigma = (0.1 * 0.9 / n as f64).sqrt();
        for (pair, count) in counts {
            let freq = count as f64 / n as f64;
            assert!((freq - 0.1).abs() < 3.0 * sigma, "pair {pair:?}: freq {freq}");
        }
    }

    #[test]
    fn minibatch_model_is_unbiased_and_bounded() {
        let sg = minibatch_quadratic_stochastic_gradient(5, 2, 0.5).unwrap();
        let mut stream = derive_stream(20, 0);
        let n = 50_000;
        let x = [2.0];
        let mut sum = 0.0;
        for _ in 0..n {
            let b = sg.gradient(&x, &sg.sample_omega(&mut stream))[0];
            assert!(b.abs() <= sg.growth_c1() * (1.0 + x[0].abs()));
            sum += b;
        }
        let mean = sum / n as f64;
        // Slope variance over pairs is below the single-part variance 1/12.
        let se = (x[0] * x[0] / 12.0 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean = {mean}");
        // Full batch is exact.
        let full = minibatch_quadratic_stochastic_gradient(5, 5, 0.5).unwrap();
        let b = full.gradient(&x, &full.sample_omega(&mut stream))[0];
        assert_relative_eq!(b, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn minibatch_wide_spread_hits_both_slopes_and_stays_unbiased() {
        // parts = 2, batch = 1, spread = 2 puts the slopes at exactly {-1, 3}.
        let sg = minibatch_quadratic_stochastic_gradient(2, 1, 2.0).unwrap();
        assert_eq!(sg.id(), "minibatch-quadratic:2,1,2");
        assert_eq!(sg.growth_c1(), 3.0);
        let mut stream = derive_stream(22, 0);
        let x = [1.0];
        let (mut lo, mut hi, mut sum) = (0usize, 0usize, 0.0);
        let n = 20_000;
        for _ in 0..n {
            let b = sg.gradient(&x, &sg.sample_omega(&mut stream))[0];
            match b {
                -1.0 => lo += 1,
                3.0 => hi += 1,
                other => panic!("unexpected slope draw {other}"),
            }
            sum += b;
        }
        assert!(lo > 0 && hi > 0);
        // Slope variance is 4, so the mean needs |mean - 1| < 3 * 2/sqrt(n).
        assert!((sum / n as f64 - 1.0).abs() < 6.0 / (n as f64).sqrt());
    }

    #[test]
    fn test_functions_evaluate_and_differentiate() {
        let x = [1.5, -0.5];
        let v = [0.25, 2.0];
        let cases = [("x", 1.5), ("x2", 2.25), ("v", 0.25), ("v2", 0.0625), ("const:2.5", 2.5)];
        for (id, expected) in cases {
            let f = test_function_from_id(id).unwrap();
            assert_eq!(f.eval(&x, &v), expected, "{id}");
        }
        assert!(matches!(test_function_from_id("bogus"), Err(Error::UnknownId { .. })));
        assert!(test_function_from_id("const:abc").is_err());

        // Finite differences of f match the coded gradients.
        let mut stream = derive_stream(21, 0);
        let eps = 1e-5;
        for id in ["x", "x2", "v", "v2", "const:0.7"] {
            let f = test_function_from_id(id).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..2).map(|_| stream.uniform(-3.0, 3.0)).collect();
                let v: Vec<f64> = (0..2).map(|_| stream.uniform(-3.0, 3.0)).collect();
                let (mut gx, mut gv) = (vec![0.0; 2], vec![0.0; 2]);
                f.grad_into(&x, &v, &mut gx, &mut gv);
                for c in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += eps;
                    xm[c] -= eps;
                    let fd = (f.eval(&xp, &v) - f.eval(&xm, &v)) / (2.0 * eps);
                    assert!((fd - gx[c]).abs() <= 1e-6 * gx[c].abs().max(1.0), "{id} d/dx{c}");
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[c] += eps;
                    vm[c] -= eps;
                    let fd = (f.eval(&x, &vp) - f.eval(&x, &vm)) / (2.0 * eps);
                    assert!((fd - gv[c]).abs() <= 1e-6 * gv[c].abs().max(1.0), "{id} d/dv{c}");
                }
            }
        }
    }

    #[test]
    fn position_grid_shapes() {
        let g = position_grid(-1.0, 1.0, 3, 2);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![-1.0, -1.0]));
        assert!(g.contains(&vec![1.0, 1.0]));
        assert!(g.contains(&vec![0.0, 0.0]));
        let single = position_grid(0.0, 2.0, 1, 1);
        assert_eq!(single, vec![vec![1.0]]);
    }
}
