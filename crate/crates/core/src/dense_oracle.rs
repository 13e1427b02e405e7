//! Dense full-matrix reference pipeline.
//!
//! Builds the mixed-model system directly from the `N`-row design and basis
//! matrices and evaluates every quantity from first principles: explicit
//! residuals for the quadratic form, LU factorization for determinants and
//! solves. Deliberately shares no code with the compressed store path; the
//! test suites use it as the independent referee. Only feasible at small `N`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SammError};
use crate::terms::{TermKind, TermSpec, ThetaTerm, VarianceParams};

pub struct DenseModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Full `N x L_p` basis matrix per term.
    pub a: Vec<DMatrix<f64>>,
    pub terms: Vec<TermSpec>,
    pub lambda_hat: DVector<f64>,
}

impl DenseModel {
    fn v_diag(&self, p: usize, theta: &VarianceParams) -> Result<DVector<f64>> {
        // Recomputed from the definition rather than shared with the
        // estimation path.
        let sigma = theta.sigma2.sqrt();
        let term = &self.terms[p];
        match (&term.kind, &theta.terms[p]) {
            (TermKind::Group, ThetaTerm::Group { tau }) => {
                Ok(DVector::from_element(term.width, tau / sigma))
            }
            (_, ThetaTerm::Spatial { tau, alpha }) => Ok(DVector::from_fn(term.width, |l, _| {
                (tau / sigma) * self.lambda_hat[l].powf(*alpha)
            })),
            _ => Err(SammError::InvalidParameter(
                "dense oracle: parameter kind mismatch".into(),
            )),
        }
    }

    /// Scaled design `[X, A_1 V_1, ..., A_P V_P]` stacked column-wise.
    fn scaled_design(&self, theta: &VarianceParams) -> Result<DMatrix<f64>> {
        let n = self.y.len();
        let total: usize = self.x.ncols() + self.terms.iter().map(|t| t.width).sum::<usize>();
        let mut z = DMatrix::<f64>::zeros(n, total);
        z.view_mut((0, 0), (n, self.x.ncols())).copy_from(&self.x);
        let mut off = self.x.ncols();
        for p in 0..self.terms.len() {
            let v = self.v_diag(p, theta)?;
            for j in 0..self.terms[p].width {
                let col = self.a[p].column(j) * v[j];
                z.column_mut(off + j).copy_from(&col);
            }
            off += self.terms[p].width;
        }
        Ok(z)
    }

    /// The full-matrix system: `R = Z'Z + blockdiag(0_K, I)`, `rhs = Z'y`.
    pub fn assemble(&self, theta: &VarianceParams) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let z = self.scaled_design(theta)?;
        let mut r = z.tr_mul(&z);
        let k = self.x.ncols();
        for i in k..r.nrows() {
            r[(i, i)] += 1.0;
        }
        let rhs = z.tr_mul(&self.y);
        Ok((r, DVector::from_column_slice(rhs.as_slice())))
    }

    /// Coefficients by LU solve of the dense system.
    pub fn coefficients(&self, theta: &VarianceParams) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let (r, rhs) = self.assemble(theta)?;
        let lu = r.lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| SammError::SingularSystem("dense oracle system is singular".into()))?;
        Ok(self.split(&sol))
    }

    fn split(&self, sol: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let k = self.x.ncols();
        let b = sol.rows(0, k).into_owned();
        let mut off = k;
        let us = self
            .terms
            .iter()
            .map(|t| {
                let u = sol.rows(off, t.width).into_owned();
                off += t.width;
                u
            })
            .collect();
        (b, us)
    }

    /// Explicit residual-plus-penalty: `||y - Xb - sum A_p V_p u_p||^2 + sum ||u_p||^2`.
    pub fn d_value(&self, theta: &VarianceParams) -> Result<f64> {
        let (b, us) = self.coefficients(theta)?;
        let mut resid = &self.y - &self.x * &b;
        for p in 0..self.terms.len() {
            let v = self.v_diag(p, theta)?;
            resid -= &self.a[p] * v.component_mul(&us[p]);
        }
        let penalty: f64 = us.iter().map(|u| u.dot(u)).sum();
        Ok(resid.dot(&resid) + penalty)
    }

    fn log_det(r: &DMatrix<f64>) -> f64 {
        let lu = r.clone().lu();
        let u = lu.u();
        let mut s = 0.0;
        for i in 0..u.nrows() {
            s += u[(i, i)].abs().ln();
        }
        s
    }

    pub fn restricted_loglik(&self, theta: &VarianceParams) -> Result<f64> {
        let n = self.y.len();
        let k = self.x.ncols();
        let (r, _) = self.assemble(theta)?;
        let d = self.d_value(theta)?;
        let nk = (n - k) as f64;
        Ok(-0.5 * Self::log_det(&r) - 0.5 * nk * (1.0 + (2.0 * std::f64::consts::PI * d / nk).ln()))
    }

    /// `sigma2 R^{-1}` by explicit inversion.
    pub fn covariance(&self, theta: &VarianceParams, sigma2: f64) -> Result<DMatrix<f64>> {
        let (r, _) = self.assemble(theta)?;
        let inv = r
            .lu()
            .try_inverse()
            .ok_or_else(|| SammError::SingularSystem("dense oracle system is singular".into()))?;
        Ok(inv * sigma2)
    }

    /// Fitted values `X b + sum A_p V_p u_p`.
    pub fn fitted_values(&self, theta: &VarianceParams) -> Result<DVector<f64>> {
        let (b, us) = self.coefficients(theta)?;
        let mut fitted = &self.x * &b;
        for p in 0..self.terms.len() {
            let v = self.v_diag(p, theta)?;
            fitted += &self.a[p] * v.component_mul(&us[p]);
        }
        Ok(fitted)
    }

    /// One term's effect rows `A_p V_p u_p`.
    pub fn effect(&self, p: usize, theta: &VarianceParams) -> Result<DVector<f64>> {
        let (_, us) = self.coefficients(theta)?;
        let v = self.v_diag(p, theta)?;
        Ok(&self.a[p] * v.component_mul(&us[p]))
    }
}
