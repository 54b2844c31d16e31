//! Randomized invariants across the public API: covariance positivity,
//! Brownian-bridge consistency, stream purity, and estimator identities.

use proptest::prelude::*;

use ulmc_core::estimator::{aggregate_cell, fit_slope, CellStats, ErrorReport};
use ulmc_core::randomness::{derive_stream, ou_covariance, BrownianPath};
use ulmc_core::ReferenceMean;

fn synthetic_report(cells: Vec<CellStats>) -> ErrorReport {
    let floor_estimate = cells
        .iter()
        .min_by(|a, b| a.h.total_cmp(&b.h))
        .map(|c| c.mse)
        .unwrap_or(0.0);
    ErrorReport {
        cells,
        floor_estimate,
        reference: ReferenceMean {
            value: 0.0,
            abs_error_bound: 0.0,
            method: "synthetic".to_string(),
        },
        fitted: None,
    }
}

proptest! {
    /// The joint OU increment covariance is symmetric positive definite
    /// for every damping rate and time span, and its Cholesky factor
    /// reconstructs it.
    #[test]
    fn ou_covariance_is_positive_definite(
        gamma in 0.1f64..50.0,
        t in 1e-6f64..10.0,
    ) {
        let cov = ou_covariance(gamma, t).unwrap();
        prop_assert!(cov.sigma_xx > 0.0);
        prop_assert!(cov.sigma_vv > 0.0);
        let det = cov.sigma_xx * cov.sigma_vv - cov.sigma_xv * cov.sigma_xv;
        prop_assert!(
            det > -1e-15 * cov.sigma_xx * cov.sigma_vv,
            "det {det} with sigma_xx {} sigma_vv {}", cov.sigma_xx, cov.sigma_vv
        );
        let chol = cov.cholesky();
        let xx = chol.l_xx * chol.l_xx;
        let xv = chol.l_xx * chol.l_vx;
        let vv = chol.l_vx * chol.l_vx + chol.l_vv * chol.l_vv;
        prop_assert!((xx - cov.sigma_xx).abs() <= 1e-12 * cov.sigma_xx.abs());
        prop_assert!((xv - cov.sigma_xv).abs() <= 1e-12 * cov.sigma_xx.max(cov.sigma_vv));
        prop_assert!((vv - cov.sigma_vv).abs() <= 1e-12 * cov.sigma_vv.abs());
    }

    /// Bridge refinement splits each parent increment into two halves that
    /// sum back to it, so window sums over the coarse grid survive any
    /// number of refinement rounds up to accumulated rounding.
    #[test]
    fn bridge_refinement_preserves_coarse_window_sums(
        seed in any::<u64>(),
        level in 4u32..9,
        extra in 1u32..4,
        window in 0usize..8,
    ) {
        let horizon = 2.0;
        let coarse = BrownianPath::sample(horizon, level, 2, derive_stream(seed, 0)).unwrap();
        let width = horizon / 8.0;
        let start = window as f64 * width;
        let before = coarse.increment_over(start, width).unwrap();
        let fine = coarse.clone().refine(level + extra).unwrap();
        prop_assert_eq!(fine.level(), level + extra);
        let after = fine.increment_over(start, width).unwrap();
        for c in 0..2 {
            prop_assert!(
                (before[c] - after[c]).abs() <= 1e-10,
                "coordinate {c}: coarse {} vs refined {}", before[c], after[c]
            );
        }
    }

    /// A stream is a pure function of (master seed, id): replaying yields
    /// the identical sequence, and distinct ids decorrelate.
    #[test]
    fn streams_replay_and_separate(master in any::<u64>(), id in 0u64..1000) {
        let mut a = derive_stream(master, id);
        let mut b = derive_stream(master, id);
        let first: Vec<f64> = (0..16).map(|_| a.standard_normal()).collect();
        let replay: Vec<f64> = (0..16).map(|_| b.standard_normal()).collect();
        prop_assert_eq!(&first, &replay);
        let mut c = derive_stream(master, id + 1);
        let other: Vec<f64> = (0..16).map(|_| c.standard_normal()).collect();
        prop_assert_ne!(&first, &other);
    }

    /// The aggregated cell satisfies mse = bias^2 + variance (M-1)/M to
    /// near machine precision for arbitrary error samples.
    #[test]
    fn cell_aggregation_satisfies_the_decomposition_identity(
        errors in prop::collection::vec(-1e3f64..1e3, 2..50),
    ) {
        let m = errors.len() as f64;
        let cell = aggregate_cell(0.25, 100, &errors, 0);
        let recomposed = cell.bias * cell.bias + cell.variance * (m - 1.0) / m;
        prop_assert!(
            (cell.mse - recomposed).abs() <= 1e-12 * cell.mse.max(1e-300),
            "mse {} vs recomposed {}", cell.mse, recomposed
        );
        prop_assert!(cell.variance >= 0.0);
        prop_assert_eq!(cell.survivors, errors.len());
    }

    /// Planting errors {+e, -e} with e = sqrt(C h^s) makes each cell's mse
    /// exactly C h^s, and the log-log fit recovers the exponent.
    #[test]
    fn slope_fit_recovers_planted_power_laws(
        exponent in 0.5f64..4.0,
        scale in 0.01f64..100.0,
    ) {
        let cells: Vec<CellStats> = (1..=6)
            .map(|j| {
                let h = 0.5f64.powi(j);
                let e = (scale * h.powf(exponent)).sqrt();
                aggregate_cell(h, 100, &[e, -e], 0)
            })
            .collect();
        let report = synthetic_report(cells);
        let fit = fit_slope(&report, (0.5f64.powi(6), 0.5), false).unwrap();
        prop_assert!(
            (fit.slope - exponent).abs() <= 1e-9,
            "fitted {} planted {exponent}", fit.slope
        );
        prop_assert!((fit.intercept - scale.ln()).abs() <= 1e-9);
        prop_assert_eq!(fit.cells_used, 6);
    }
}
