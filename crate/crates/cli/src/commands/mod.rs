//! One module per subcommand; each returns the process exit code.

pub mod diagnose;
pub mod reference_mean;
pub mod strong_order;
pub mod sweep;

use ulmc_core::State;

/// Expands a scalar `(x, v)` probe point to a `dim`-dimensional state by
/// repeating each component, mirroring how `x0`/`v0` broadcast.
pub(crate) fn point_state(x: f64, v: f64, dim: usize) -> State {
    State::new(vec![x; dim], vec![v; dim])
}
