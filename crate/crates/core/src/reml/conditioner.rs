//! Cached partial-update evaluation of the restricted likelihood for one
//! term.
//!
//! With every other term fixed, only the blocks of `R(Theta)` touching term
//! `p` change. The Cholesky factor of the complement is computed once; each
//! probe of `theta_p` then costs `O(L_p^3)` regardless of how many terms or
//! rows the model has:
//!
//! `ln|R| = ln|R_--| + ln|S|`, `S = V (M_pp - Z0'Z0) V + I`,
//! `rhs'R^{-1}rhs = c'c + g'S^{-1}g`, `g = V (m_p - Z0'c)`,
//!
//! where `Z0 = L^{-1} U` and `c = L^{-1} rhs_-` are cached.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{chol_with_jitter, coords_to_theta, Layout, ModelSpec};
use crate::accumulate::InnerProductStore;
use crate::error::{Result, SammError};
use crate::terms::{v_matrix, TermSpec, VarianceParams};

#[derive(Debug)]
pub struct TermConditioner {
    term: TermSpec,
    lambda_hat: DVector<f64>,
    /// `M_pp - Z0'Z0`
    m_pp_reduced: DMatrix<f64>,
    /// `m_p - Z0'c`
    g_base: DVector<f64>,
    base_logdet: f64,
    base_quad: f64,
    m_yy: f64,
    n: usize,
    k: usize,
}

impl TermConditioner {
    pub fn new(
        store: &InnerProductStore,
        spec: &ModelSpec,
        theta: &VarianceParams,
        p: usize,
    ) -> Result<Self> {
        let n_terms = spec.terms.len();
        if p >= n_terms {
            return Err(SammError::InvalidParameter(format!(
                "term index {p} out of range for {n_terms} terms"
            )));
        }
        let others: Vec<usize> = (0..n_terms).filter(|&q| q != p).collect();
        let v: Vec<Option<DVector<f64>>> = (0..n_terms)
            .map(|q| {
                if q == p {
                    Ok(None)
                } else {
                    spec.v_diag(q, &theta.terms[q], theta.sigma2).map(Some)
                }
            })
            .collect::<Result<_>>()?;

        let k = store.k();
        let widths_comp: Vec<usize> = others.iter().map(|&q| spec.terms[q].width).collect();
        let layout = Layout::new(k, &widths_comp);
        let w_p = spec.terms[p].width;

        // Complement system R_-- and rhs_-.
        let mut a = DMatrix::<f64>::zeros(layout.dim, layout.dim);
        let mut rhs = DVector::<f64>::zeros(layout.dim);
        a.view_mut((0, 0), (k, k)).copy_from(&store.m_00);
        rhs.rows_mut(0, k).copy_from(&store.m_0);
        for (ci, &q) in others.iter().enumerate() {
            let off_q = layout.offsets[ci];
            let w_q = layout.widths[ci];
            let vq = v[q].as_ref().expect("off-term V exists");
            let m0q = &store.m_0p[q];
            for j in 0..w_q {
                for i in 0..k {
                    let val = m0q[(i, j)] * vq[j];
                    a[(i, off_q + j)] = val;
                    a[(off_q + j, i)] = val;
                }
            }
            rhs.rows_mut(off_q, w_q)
                .copy_from(&store.m_p[q].component_mul(vq));
            for (cj, &s) in others.iter().enumerate().skip(ci) {
                let off_s = layout.offsets[cj];
                let w_s = layout.widths[cj];
                let vs = v[s].as_ref().expect("off-term V exists");
                let (lo, hi) = (q.min(s), q.max(s));
                let mqs_ref = store.cross_ref(lo, hi);
                for j in 0..w_s {
                    for i in 0..w_q {
                        let raw = if q <= s { mqs_ref[(i, j)] } else { mqs_ref[(j, i)] };
                        let mut val = vq[i] * raw * vs[j];
                        if ci == cj && i == j {
                            val += 1.0;
                        }
                        a[(off_q + i, off_s + j)] = val;
                        if ci != cj {
                            a[(off_s + j, off_q + i)] = val;
                        }
                    }
                }
            }
        }

        // Unscaled coupling U = [M_0p ; V_q M_qp (q != p)].
        let mut u = DMatrix::<f64>::zeros(layout.dim, w_p);
        u.view_mut((0, 0), (k, w_p)).copy_from(&store.m_0p[p]);
        for (ci, &q) in others.iter().enumerate() {
            let off_q = layout.offsets[ci];
            let w_q = layout.widths[ci];
            let vq = v[q].as_ref().expect("off-term V exists");
            let (lo, hi) = (q.min(p), q.max(p));
            let m_ref = store.cross_ref(lo, hi);
            for j in 0..w_p {
                for i in 0..w_q {
                    let raw = if q <= p { m_ref[(i, j)] } else { m_ref[(j, i)] };
                    u[(off_q + i, j)] = vq[i] * raw;
                }
            }
        }

        let (chol, _) = chol_with_jitter(&a)?;
        let l = chol.l();
        let z0 = l
            .solve_lower_triangular(&u)
            .ok_or_else(|| SammError::SingularSystem("complement factor is singular".into()))?;
        let c = l
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| SammError::SingularSystem("complement factor is singular".into()))?;

        let mut base_logdet = 0.0;
        for i in 0..layout.dim {
            base_logdet += l[(i, i)].ln();
        }
        base_logdet *= 2.0;

        let m_pp_reduced = store.cross_ref(p, p) - z0.tr_mul(&z0);
        let zc = z0.tr_mul(&c);
        let g_base = &store.m_p[p] - DVector::from_column_slice(zc.as_slice());

        Ok(Self {
            term: spec.terms[p].clone(),
            lambda_hat: spec.lambda_hat.clone(),
            m_pp_reduced,
            g_base,
            base_logdet,
            base_quad: c.dot(&c),
            m_yy: store.m_yy,
            n: store.n_seen(),
            k,
        })
    }

    /// Restricted log-likelihood of the full model at search coordinates `x`
    /// for this term, other terms fixed. Invalid probes return `-inf`.
    pub fn eval_coords(&self, x: &[f64], sigma2_ref: f64) -> f64 {
        let theta_p = coords_to_theta(&self.term.kind, x, sigma2_ref);
        let v = match v_matrix(&self.term, &theta_p, sigma2_ref, &self.lambda_hat) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let w = v.len();
        let mut s = DMatrix::<f64>::zeros(w, w);
        for j in 0..w {
            for i in 0..w {
                let mut val = v[i] * self.m_pp_reduced[(i, j)] * v[j];
                if i == j {
                    val += 1.0;
                }
                s[(i, j)] = val;
            }
        }
        let chol = match Cholesky::new(s) {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        let mut logdet_s = 0.0;
        {
            let l = chol.l_dirty();
            for i in 0..w {
                logdet_s += l[(i, i)].ln();
            }
            logdet_s *= 2.0;
        }
        let g = v.component_mul(&self.g_base);
        let t = chol.solve(&g);
        let quad = g.dot(&t);
        let d = self.m_yy - self.base_quad - quad;
        if !(d.is_finite() && d > 0.0) {
            return f64::NEG_INFINITY;
        }
        let nk = (self.n - self.k) as f64;
        -0.5 * (self.base_logdet + logdet_s)
            - 0.5 * nk * (1.0 + (2.0 * std::f64::consts::PI * d / nk).ln())
    }
}
