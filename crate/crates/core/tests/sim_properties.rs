//! Properties of the synthetic-data generator that need the dense Moran
//! coefficient as referee.

use nalgebra::DVector;
use rayon::prelude::*;
use samm_core::basis::{moran_coefficient, mst_range, ProximityMatrix};
use samm_core::sim::{
    generate_dataset, median, run_experiment, ExperimentCell, ExperimentConfig, SimConfig,
};

/// Surfaces drawn with the cubed eigenvalue power carry more large-scale
/// structure, so their sample Moran coefficient should exceed that of the
/// square-root surfaces in nearly every replicate.
#[test]
fn generated_scales_order_the_moran_coefficient() {
    let n = 400;
    let reps = 20u64;
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cfg = SimConfig::new(n, 0.0, 0.0, 9000 + rep);
            let ds = generate_dataset(&cfg).unwrap();
            let r = mst_range(&ds.coords).unwrap();
            let c0 = ProximityMatrix::kernel_zero_diag(&ds.coords, r).unwrap();
            let mc_of = |v: &DVector<f64>| moran_coefficient(v, &c0).unwrap();
            // Remove the unit mean: the MC of the spatial deviation is what
            // the eigenvalue power controls.
            let large: Vec<f64> = (0..3)
                .map(|p| mc_of(&ds.w[p].add_scalar(-1.0)))
                .collect();
            let small: Vec<f64> = (3..6)
                .map(|p| mc_of(&ds.w[p].add_scalar(-1.0)))
                .collect();
            usize::from(median(&large) > median(&small))
        })
        .sum();
    assert!(
        hits >= (0.9 * reps as f64) as usize,
        "MC ordering held in only {hits} of {reps} replicates"
    );
}

#[test]
fn experiment_summary_bookkeeping() {
    let cfg = ExperimentConfig {
        cells: vec![
            ExperimentCell {
                n: 240,
                s_x: 0.0,
                tau_g2_ratio: 0.0,
            },
            ExperimentCell {
                n: 240,
                s_x: 0.5,
                tau_g2_ratio: 1.0,
            },
        ],
        replicates: 2,
        base_seed: 77,
        fit_knots: 15,
        fit_max_pairs: 12,
        ..ExperimentConfig::default()
    };
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.cells.len(), 2);
    for cell in &summary.cells {
        assert_eq!(cell.outcomes.len(), 2);
        for outcome in &cell.outcomes {
            assert!(outcome.error.is_none(), "{:?}", outcome.error);
            let wg = outcome.with_group.as_ref().unwrap();
            let ng = outcome.no_group.as_ref().unwrap();
            assert!(wg.rmse_svc_large.is_finite() && wg.rmse_svc_large > 0.0);
            assert!(ng.rmse_group.is_none());
            assert!(wg.rmse_group.unwrap().is_finite());
            assert_eq!(wg.alpha_svc.len(), 6);
        }
    }
    // Same seed, same summary (wall times aside).
    let again = run_experiment(&cfg).unwrap();
    let strip_timing = |mut s: samm_core::sim::ExperimentSummary| {
        for cell in &mut s.cells {
            for o in &mut cell.outcomes {
                for eval in [o.with_group.as_mut(), o.no_group.as_mut()].into_iter().flatten() {
                    eval.seconds = 0.0;
                }
            }
        }
        s
    };
    assert_eq!(
        serde_json::to_string(&strip_timing(summary)).unwrap(),
        serde_json::to_string(&strip_timing(again)).unwrap()
    );
}
