//! Effect recovery and prediction against the dense reference pipeline.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use samm_core::basis::nystrom_block;
use samm_core::dense_oracle::DenseModel;
use samm_core::predict::nystrom_extend;
use samm_core::sim::{fit_dataset, generate_dataset, ExperimentConfig, SimConfig};
use samm_core::terms::{v_matrix, TermKind};

fn small_fitted() -> (samm_core::sim::SimDataset, samm_core::sim::FittedModel) {
    let mut cfg = SimConfig::new(240, 0.3, 1.0, 42);
    cfg.gen_knots = Some(40);
    let ds = generate_dataset(&cfg).unwrap();
    let exp_cfg = ExperimentConfig {
        fit_knots: 25,
        fit_max_pairs: 20,
        block_rows: 128,
        ..ExperimentConfig::default()
    };
    let fitted = fit_dataset(&ds, true, &exp_cfg, 42).unwrap();
    (ds, fitted)
}

#[test]
fn extension_is_bitwise_identical_to_training_rows() {
    let (ds, fitted) = small_fitted();
    let train = nystrom_block(&fitted.factory, &ds.coords[..50]).unwrap();
    let extend = nystrom_extend(&fitted.factory, &ds.coords[..50]).unwrap();
    assert_eq!(train, extend);
    // At knot centers the rows collapse to E diag(lambda/(lambda+1)).
    let at_knots = nystrom_extend(&fitted.factory, &fitted.factory.knots.centers.clone()).unwrap();
    for col in 0..fitted.factory.l_pos() {
        let lam = fitted.factory.eig.values[col];
        for i in 0..fitted.factory.knots.len() {
            assert_abs_diff_eq!(
                at_knots[(i, col)],
                fitted.factory.eig.vectors[(i, col)] * lam / (lam + 1.0),
                epsilon = 1e-10
            );
        }
    }
}

#[test]
fn recovery_matches_dense_effect_oracle() {
    let (ds, fitted) = small_fitted();
    let n = ds.y.len();
    let predictor = fitted.predictor();

    // Rebuild the full basis matrices the dense referee needs.
    let e_rows = nystrom_block(&fitted.factory, &ds.coords).unwrap();
    let mut a = Vec::new();
    for t in &fitted.spec.terms {
        let m = match t.kind {
            TermKind::ResidualSpatial => e_rows.clone(),
            TermKind::Svc { x_col } => {
                let mut m = e_rows.clone();
                for i in 0..n {
                    m.row_mut(i).scale_mut(fitted.x[(i, x_col)]);
                }
                m
            }
            TermKind::Group => {
                let mut m = DMatrix::<f64>::zeros(n, fitted.group_index.len());
                for i in 0..n {
                    let g = fitted.group_index.position(&ds.labels[i]).unwrap();
                    m[(i, g)] = 1.0;
                }
                m
            }
        };
        a.push(m);
    }
    let dense = DenseModel {
        x: fitted.x.clone(),
        y: ds.y.clone(),
        a,
        terms: fitted.spec.terms.clone(),
        lambda_hat: fitted.spec.lambda_hat.clone(),
    };

    // recover_effects must reproduce A_p V u_p from the dense matrices with
    // the fitted coefficients (the dense path re-solves, so compare the
    // effect formula directly with the fitted u).
    for (p, t) in fitted.spec.terms.iter().enumerate() {
        let surface = predictor.recover_effects(p, &ds.coords, Some(&ds.labels)).unwrap();
        let v = v_matrix(
            t,
            &fitted.fit.theta_hat.terms[p],
            fitted.fit.sigma2_hat,
            &fitted.spec.lambda_hat,
        )
        .unwrap();
        let dense_effect = &dense.a[p] * v.component_mul(&fitted.fit.u_hat[p]);
        for i in 0..n {
            let expect = match t.kind {
                TermKind::Svc { x_col } => {
                    // The surface is the coefficient b_k + w_p; the dense
                    // effect contains x * w_p.
                    let xi = fitted.x[(i, x_col)];
                    if xi.abs() < 1e-9 {
                        continue;
                    }
                    fitted.fit.b_hat[x_col] + dense_effect[i] / xi
                }
                _ => dense_effect[i],
            };
            assert_abs_diff_eq!(
                surface.values[i],
                expect,
                epsilon = 1e-10 * expect.abs().max(1.0)
            );
        }
        // SE surfaces are finite and nonnegative everywhere.
        assert!(surface.se.iter().all(|&s| s.is_finite() && s >= 0.0));
    }
}

#[test]
fn training_prediction_reproduces_fitted_values() {
    let (ds, fitted) = small_fitted();
    let predictor = fitted.predictor();
    let n = ds.y.len();
    let prediction = predictor.predict(&ds.coords, &fitted.x, Some(&ds.labels)).unwrap();
    assert!(prediction.unseen_label_rows.is_empty());

    // In-sample fitted values from the coefficient stack: X b + sum A_p V u.
    let e_rows = nystrom_block(&fitted.factory, &ds.coords).unwrap();
    let mut fitted_values = &fitted.x * &fitted.fit.b_hat;
    for (p, t) in fitted.spec.terms.iter().enumerate() {
        let v = v_matrix(
            t,
            &fitted.fit.theta_hat.terms[p],
            fitted.fit.sigma2_hat,
            &fitted.spec.lambda_hat,
        )
        .unwrap();
        let w = v.component_mul(&fitted.fit.u_hat[p]);
        match t.kind {
            TermKind::ResidualSpatial => fitted_values += &e_rows * &w,
            TermKind::Svc { x_col } => {
                let spatial = &e_rows * &w;
                for i in 0..n {
                    fitted_values[i] += fitted.x[(i, x_col)] * spatial[i];
                }
            }
            TermKind::Group => {
                for i in 0..n {
                    let g = fitted.group_index.position(&ds.labels[i]).unwrap();
                    fitted_values[i] += w[g];
                }
            }
        }
    }
    for i in 0..n {
        assert_abs_diff_eq!(
            prediction.y_hat[i],
            fitted_values[i],
            epsilon = 1e-10 * fitted_values[i].abs().max(1.0)
        );
    }

    // Residuals behave like the model says they should.
    let resid = &ds.y - &prediction.y_hat;
    let sigma_hat = fitted.fit.sigma2_hat.sqrt();
    assert!(resid.mean().abs() <= 3.0 * sigma_hat / (n as f64).sqrt());
}

#[test]
fn block_partition_of_recovery_is_identical() {
    let (ds, fitted) = small_fitted();
    let predictor = fitted.predictor();
    for p in [0usize, ds.w.len(), ds.w.len() + 1] {
        let whole = predictor.recover_effects(p, &ds.coords, Some(&ds.labels)).unwrap();
        let mut offset = 0;
        for chunk in 0..3 {
            let lo = chunk * 80;
            let hi = ((chunk + 1) * 80).min(ds.coords.len());
            let part = predictor
                .recover_effects(p, &ds.coords[lo..hi], Some(&ds.labels[lo..hi].to_vec()))
                .unwrap();
            for i in 0..(hi - lo) {
                assert_abs_diff_eq!(
                    part.values[i],
                    whole.values[offset + i],
                    epsilon = 1e-12 * whole.values[offset + i].abs().max(1e-6)
                );
                assert_abs_diff_eq!(
                    part.se[i],
                    whole.se[offset + i],
                    epsilon = 1e-12 * whole.se[offset + i].abs().max(1e-6)
                );
            }
            offset += hi - lo;
        }
    }
}

#[test]
fn unseen_group_labels_are_flagged_with_prior_spread() {
    let (ds, fitted) = small_fitted();
    let predictor = fitted.predictor();
    let g_term = ds.w.len() + 1;
    let labels: Vec<String> = vec!["never-seen".into(), ds.labels[0].clone()];
    let coords = vec![ds.coords[0], ds.coords[1]];
    let surface = predictor.recover_effects(g_term, &coords, Some(&labels)).unwrap();
    assert_eq!(surface.unseen_rows, vec![0]);
    assert_eq!(surface.values[0], 0.0);
    let tau_g = fitted.fit.theta_hat.terms[g_term].tau();
    assert_abs_diff_eq!(surface.se[0], tau_g, epsilon = 1e-12);

    let prediction = predictor
        .predict(&coords, &fitted.x.rows(0, 2).into_owned(), Some(&labels))
        .unwrap();
    assert_eq!(prediction.unseen_label_rows, vec![0]);
}

#[test]
fn far_sites_stay_finite_and_bounded() {
    let (_, fitted) = small_fitted();
    let predictor = fitted.predictor();
    let far = vec![[1e6, 1e6], [-1e6, 2e6]];
    for (p, t) in fitted.spec.terms.iter().enumerate() {
        if !t.is_spatial() {
            continue;
        }
        let surface = predictor.recover_effects(p, &far, None).unwrap();
        let v = v_matrix(
            t,
            &fitted.fit.theta_hat.terms[p],
            fitted.fit.sigma2_hat,
            &fitted.spec.lambda_hat,
        )
        .unwrap();
        let w = v.component_mul(&fitted.fit.u_hat[p]);
        // Bound from the fitted model: |e_i . w| <= max basis row norm * |w|.
        let rows = nystrom_extend(&fitted.factory, &far).unwrap();
        let max_row_norm = (0..rows.nrows())
            .map(|i| rows.row(i).norm())
            .fold(0.0f64, f64::max);
        let bound = w.norm() * max_row_norm + 1e-12;
        for i in 0..far.len() {
            assert!(surface.values[i].is_finite());
            let spatial_part = match t.kind {
                TermKind::Svc { x_col } => (surface.values[i] - fitted.fit.b_hat[x_col]).abs(),
                _ => surface.values[i].abs(),
            };
            assert!(spatial_part <= bound, "{spatial_part} > {bound}");
        }
    }
}

#[test]
fn zero_coefficients_predict_zero() {
    let (ds, fitted) = small_fitted();
    let mut zeroed = fitted.clone();
    zeroed.fit.b_hat = DVector::zeros(fitted.fit.b_hat.len());
    zeroed.fit.u_hat = fitted
        .fit
        .u_hat
        .iter()
        .map(|u| DVector::zeros(u.len()))
        .collect();
    let predictor = zeroed.predictor();
    let prediction = predictor
        .predict(&ds.coords[..10], &fitted.x.rows(0, 10).into_owned(), Some(&ds.labels[..10].to_vec()))
        .unwrap();
    assert!(prediction.y_hat.amax() == 0.0);
}

#[test]
fn dropped_term_yields_constant_surface() {
    // tau = 0 forces V = 0: SVC surfaces collapse to the fixed coefficient,
    // residual surfaces to zero.
    let (ds, fitted) = small_fitted();
    let mut forced = fitted.clone();
    for t in forced.fit.theta_hat.terms.iter_mut() {
        match t {
            samm_core::terms::ThetaTerm::Spatial { tau, .. } => *tau = 0.0,
            samm_core::terms::ThetaTerm::Group { tau } => *tau = 0.0,
        }
    }
    let predictor = forced.predictor();
    let svc = predictor.recover_effects(0, &ds.coords[..20], Some(&ds.labels[..20].to_vec())).unwrap();
    for i in 0..20 {
        assert_abs_diff_eq!(svc.values[i], forced.fit.b_hat[1], epsilon = 1e-14);
    }
    let resid = predictor
        .recover_effects(ds.w.len(), &ds.coords[..20], Some(&ds.labels[..20].to_vec()))
        .unwrap();
    assert!(resid.values.amax() == 0.0);
}
