//! Effect recovery at training sites and prediction at new sites.
//!
//! Basis rows at arbitrary coordinates come from the same generator used
//! during fitting, so in-sample recovery and out-of-sample prediction share
//! one code path. Standard errors follow the Henderson blocks carried in the
//! fit result.

use nalgebra::{DMatrix, DVector};

use crate::basis::{nystrom_block, BasisFactory};
use crate::error::{Result, SammError};
use crate::reml::{FitResult, ModelSpec};
use crate::terms::{v_matrix, GroupIndex, TermKind};

/// Per-row effect values and standard errors for one term.
#[derive(Debug, Clone)]
pub struct EffectSurface {
    pub values: DVector<f64>,
    pub se: DVector<f64>,
    /// Rows whose group label was not seen in training; their effect is the
    /// prior mean 0 and their standard error the prior spread `tau_g`.
    pub unseen_rows: Vec<usize>,
}

/// Rows of the approximate eigenvector basis at arbitrary (new) sites.
/// Identical to the training-time generator, row for row.
pub fn nystrom_extend(factory: &BasisFactory, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    nystrom_block(factory, coords)
}

/// Prediction output: expected response plus the per-term decomposition.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub y_hat: DVector<f64>,
    /// One surface per term, in term order: the coefficient surface
    /// `b_k + w_p` for SVC terms, the effect itself otherwise.
    pub effects: Vec<EffectSurface>,
    pub unseen_label_rows: Vec<usize>,
}

/// Everything needed to evaluate a fitted model at arbitrary rows.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub fit: &'a FitResult,
    pub spec: &'a ModelSpec,
    pub factory: Option<&'a BasisFactory>,
    pub group_index: Option<&'a GroupIndex>,
}

impl<'a> Predictor<'a> {
    /// Recovers one term's effect surface on a data block.
    pub fn recover_effects(
        &self,
        term: usize,
        coords: &[[f64; 2]],
        labels: Option<&[String]>,
    ) -> Result<EffectSurface> {
        let basis = if self.term_spec(term)?.is_spatial() {
            Some(self.basis_rows(coords)?)
        } else {
            None
        };
        self.term_effect(term, basis.as_ref(), labels, coords.len())
    }

    /// Expected response and per-term decomposition at new rows.
    ///
    /// `x` must carry every fixed-effect column in training order.
    pub fn predict(
        &self,
        coords: &[[f64; 2]],
        x: &DMatrix<f64>,
        labels: Option<&[String]>,
    ) -> Result<Prediction> {
        let n = coords.len();
        if x.nrows() != n {
            return Err(SammError::InvalidInput(format!(
                "covariate block has {} rows, coordinates have {n}",
                x.nrows()
            )));
        }
        if x.ncols() != self.fit.k {
            return Err(SammError::InvalidInput(format!(
                "covariate block has {} columns, the model was fitted with {}",
                x.ncols(),
                self.fit.k
            )));
        }
        let any_spatial = self.spec.terms.iter().any(|t| t.is_spatial());
        let basis = if any_spatial {
            Some(self.basis_rows(coords)?)
        } else {
            None
        };

        let mut y_hat = x * &self.fit.b_hat;
        let mut effects = Vec::with_capacity(self.spec.terms.len());
        let mut unseen = Vec::new();
        for (p, spec) in self.spec.terms.iter().enumerate() {
            let surface = self.term_effect(p, basis.as_ref(), labels, n)?;
            match spec.kind {
                TermKind::Svc { x_col } => {
                    // The surface is the coefficient b_k + w_p; the response
                    // contribution of the spatial part is x * w_p.
                    let b_k = self.fit.b_hat[x_col];
                    for i in 0..n {
                        y_hat[i] += x[(i, x_col)] * (surface.values[i] - b_k);
                    }
                }
                _ => {
                    y_hat += &surface.values;
                }
            }
            for &row in &surface.unseen_rows {
                if !unseen.contains(&row) {
                    unseen.push(row);
                }
            }
            effects.push(surface);
        }
        Ok(Prediction {
            y_hat,
            effects,
            unseen_label_rows: unseen,
        })
    }

    fn term_spec(&self, term: usize) -> Result<&crate::terms::TermSpec> {
        self.spec.terms.get(term).ok_or_else(|| {
            SammError::UnknownTerm(format!(
                "term index {term} out of range for {} terms",
                self.spec.terms.len()
            ))
        })
    }

    fn basis_rows(&self, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        let factory = self.factory.ok_or_else(|| {
            SammError::InvalidInput("spatial terms need a basis factory for recovery".into())
        })?;
        nystrom_extend(factory, coords)
    }

    fn term_effect(
        &self,
        p: usize,
        basis: Option<&DMatrix<f64>>,
        labels: Option<&[String]>,
        n: usize,
    ) -> Result<EffectSurface> {
        let term = self.term_spec(p)?.clone();
        let theta_p = &self.fit.theta_hat.terms[p];
        let v = v_matrix(&term, theta_p, self.fit.sigma2_hat, &self.spec.lambda_hat)?;
        let w = v.component_mul(&self.fit.u_hat[p]);
        let se_block = &self.fit.se.terms[p];

        match term.kind {
            TermKind::Group => {
                let index = self.group_index.ok_or_else(|| {
                    SammError::InvalidInput(format!("term '{}' needs the group index", term.name))
                })?;
                if let Some(lab) = labels {
                    if lab.len() != n {
                        return Err(SammError::InvalidInput(format!(
                            "label block has {} rows, coordinates have {n}",
                            lab.len()
                        )));
                    }
                }
                // sigma2 R* scaled into effect units: V cov V.
                let mut cov_vv = se_block.cov.clone();
                for j in 0..cov_vv.ncols() {
                    for i in 0..cov_vv.nrows() {
                        cov_vv[(i, j)] *= v[i] * v[j];
                    }
                }
                let tau_g = theta_p.tau();
                let mut values = DVector::zeros(n);
                let mut se = DVector::zeros(n);
                let mut unseen = Vec::new();
                for i in 0..n {
                    // A missing label block means every row is an unseen
                    // group: the effect is the prior mean, the spread the
                    // prior standard deviation.
                    match labels.and_then(|lab| index.position(&lab[i])) {
                        Some(g) => {
                            values[i] = w[g];
                            se[i] = cov_vv[(g, g)].max(0.0).sqrt();
                        }
                        None => {
                            values[i] = 0.0;
                            se[i] = tau_g;
                            unseen.push(i);
                        }
                    }
                }
                Ok(EffectSurface {
                    values,
                    se,
                    unseen_rows: unseen,
                })
            }
            TermKind::ResidualSpatial | TermKind::Svc { .. } => {
                let e = basis.ok_or_else(|| {
                    SammError::InvalidInput(format!("term '{}' needs basis rows", term.name))
                })?;
                if e.nrows() != n {
                    return Err(SammError::ShapeMismatch(format!(
                        "basis block has {} rows, expected {n}",
                        e.nrows()
                    )));
                }
                let spatial = e * &w;
                let (values, cov, cross_scale) = match term.kind {
                    TermKind::Svc { x_col } => {
                        // Coefficient surface b_k + w_p; cov carries the
                        // fixed coefficient in its leading row/column.
                        let b_k = self.fit.b_hat[x_col];
                        let c22 = se_block.cov.view((1, 1), (term.width, term.width)).into_owned();
                        let c0 = se_block.cov[(0, 0)];
                        let cross: DVector<f64> = DVector::from_fn(term.width, |j, _| {
                            se_block.cov[(0, j + 1)] * v[j]
                        });
                        (
                            spatial.map(|s| b_k + s),
                            c22,
                            Some((c0, cross)),
                        )
                    }
                    _ => (spatial, se_block.cov.clone(), None),
                };
                // Quadratic form rows: se_i^2 = [1?, e_i v]' cov [..].
                let mut m = cov;
                for j in 0..term.width {
                    for i in 0..term.width {
                        m[(i, j)] *= v[i] * v[j];
                    }
                }
                let em = e * &m;
                let mut se = DVector::zeros(n);
                for i in 0..n {
                    let mut q = 0.0;
                    for j in 0..term.width {
                        q += em[(i, j)] * e[(i, j)];
                    }
                    if let Some((c0, cross)) = &cross_scale {
                        q += c0;
                        let mut lin = 0.0;
                        for j in 0..term.width {
                            lin += e[(i, j)] * cross[j];
                        }
                        q += 2.0 * lin;
                    }
                    se[i] = q.max(0.0).sqrt();
                }
                Ok(EffectSurface {
                    values,
                    se,
                    unseen_rows: Vec::new(),
                })
            }
        }
    }
}
