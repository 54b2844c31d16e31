//! Command-line surface: subcommands plus one shared flag set.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ulmc", version, about = "Langevin sampler error-scaling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Mean-squared-error grid over step sizes for one or more integrators.
    Sweep(RunArgs),
    /// Pathwise convergence order against a refined common-noise reference.
    StrongOrder(RunArgs),
    /// Run a named diagnostic probe and print a PASS/FAIL verdict.
    Diagnose {
        /// Probe name; omit to see the valid list.
        probe: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Print the stationary mean of the chosen observable by quadrature.
    ReferenceMean(RunArgs),
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file and then to per-command defaults.
#[derive(Args)]
pub struct RunArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model id, e.g. quadsine or quadratic:1:2.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated integrator ids, e.g. em,ubu.
    #[arg(long)]
    pub integrator: Option<String>,
    /// Friction coefficient.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated step sizes; 2^-4 shorthand is accepted.
    #[arg(long)]
    pub h: Option<String>,
    /// Time horizon per trajectory.
    #[arg(long = "T")]
    pub total_time: Option<f64>,
    /// Ensemble size (independent trajectories).
    #[arg(long = "M")]
    pub trajectories: Option<usize>,
    /// Moment order for the moments probe.
    #[arg(long)]
    pub r: Option<u32>,
    /// Master seed; streams for trajectories derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observable id, e.g. x, x2, v2, const:1.
    #[arg(long)]
    pub f: Option<String>,
    /// Output directory for result files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 means all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Use the long production horizon instead of the desk-scale default.
    #[arg(long = "full-scale")]
    pub full_scale: bool,
    /// Largest step size accepted without error.
    #[arg(long)]
    pub h_max: Option<f64>,
    /// Time discarded before averaging begins.
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Monte Carlo sample count for expectation probes.
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Truncation length for the resolvent sum.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Probe evaluation points as x:v pairs separated by semicolons.
    #[arg(long)]
    pub points: Option<String>,
    /// Acceptance band lo,hi for the fitted order.
    #[arg(long)]
    pub band: Option<String>,
    /// Times probed by the kolmogorov diagnostic, comma separated.
    #[arg(long)]
    pub t_grid: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse_into_the_shared_arg_set() {
        let cli = Cli::try_parse_from([
            "ulmc",
            "sweep",
            "--model",
            "quadsine",
            "--gamma",
            "2.0",
            "--h",
            "2^-1,2^-2",
            "--T",
            "100",
            "--M",
            "10",
            "--full-scale",
        ])
        .unwrap();
        let Cmd::Sweep(args) = cli.command else { panic!("expected sweep") };
        assert_eq!(args.model.as_deref(), Some("quadsine"));
        assert_eq!(args.gamma, Some(2.0));
        assert_eq!(args.h.as_deref(), Some("2^-1,2^-2"));
        assert_eq!(args.total_time, Some(100.0));
        assert_eq!(args.trajectories, Some(10));
        assert!(args.full_scale);
    }

    #[test]
    fn diagnose_takes_the_probe_positionally() {
        let cli = Cli::try_parse_from(["ulmc", "diagnose", "poisson", "--n-mc", "64"]).unwrap();
        let Cmd::Diagnose { probe, args } = cli.command else { panic!("expected diagnose") };
        assert_eq!(probe.as_deref(), Some("poisson"));
        assert_eq!(args.n_mc, Some(64));
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["ulmc", "sweep", "--bogus", "1"]).is_err());
    }
}
