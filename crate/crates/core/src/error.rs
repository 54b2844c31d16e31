//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, simulation drivers, estimators,
/// and diagnostic probes.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A trajectory left the representable range (NaN or infinity).
    #[error("trajectory diverged at step {step}: state became non-finite")]
    Divergence { step: usize },

    /// Too few trajectories survived to form the requested statistic.
    #[error("only {survivors} of {total} trajectories finished at h = {h}; need at least 2")]
    TooFewSurvivors { h: f64, survivors: usize, total: usize },

    /// An operation needed second derivatives but the model has none.
    #[error("model '{model}' provides no Hessian, required by {operation}")]
    MissingHessian { model: String, operation: &'static str },

    /// Quadrature-based reference means only support dimensions 1 and 2.
    #[error("reference mean supports dim <= 2, got {dim}")]
    UnsupportedDimension { dim: usize },

    /// The quadrature loop hit its refinement cap before the tolerance.
    #[error("quadrature did not converge: {0}")]
    QuadratureFailed(String),

    /// A log-log or log-linear fit had fewer usable cells than required.
    #[error("fit window kept {got} cells, need at least {need}")]
    FitWindow { need: usize, got: usize },

    /// Unknown registry identifier (model, test function, or integrator).
    #[error("unknown {kind} id '{id}'; known: {known}")]
    UnknownId { kind: &'static str, id: String, known: &'static str },

    /// The Poisson-residual tail mass is too large for the requested n_max.
    #[error(
        "discrete Poisson tail not resolved at point {point_index}: \
         estimated tail {tail:.3e} exceeds {allowed:.3e}; increase n_max"
    )]
    TailNotResolved { point_index: usize, tail: f64, allowed: f64 },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
