//! Compressed restricted maximum likelihood.
//!
//! Everything here runs on the inner-product store alone: the system matrix
//! `R(Theta)`, its restricted log-likelihood, term-wise coordinate ascent over
//! the variance parameters, coefficient solves, and Henderson standard-error
//! blocks. No operation touches an `N`-row object, so the cost of a fit is
//! independent of the sample size.

mod conditioner;
mod nelder_mead;

pub use conditioner::TermConditioner;
pub use nelder_mead::{maximize, NmOptions, NmOutcome};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::accumulate::InnerProductStore;
use crate::error::{Result, SammError};
use crate::terms::{v_matrix, TermKind, TermSpec, ThetaTerm, VarianceParams};

/// Terms plus the shared approximate eigenvalues their `V` matrices need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub terms: Vec<TermSpec>,
    /// Approximate eigenvalues of the shared spatial basis; empty when the
    /// model has no spatial term.
    pub lambda_hat: DVector<f64>,
}

impl ModelSpec {
    pub fn new(terms: Vec<TermSpec>, lambda_hat: DVector<f64>) -> Result<Self> {
        for t in &terms {
            if t.is_spatial() && t.width != lambda_hat.len() {
                return Err(SammError::ShapeMismatch(format!(
                    "spatial term '{}' has width {} but {} approximate eigenvalues are available",
                    t.name,
                    t.width,
                    lambda_hat.len()
                )));
            }
        }
        Ok(Self { terms, lambda_hat })
    }

    pub fn widths(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.width).collect()
    }

    fn v_diag(&self, p: usize, theta_p: &ThetaTerm, sigma2: f64) -> Result<DVector<f64>> {
        v_matrix(&self.terms[p], theta_p, sigma2, &self.lambda_hat)
    }

    fn v_diags(&self, theta: &VarianceParams) -> Result<Vec<DVector<f64>>> {
        if theta.terms.len() != self.terms.len() {
            return Err(SammError::ShapeMismatch(format!(
                "{} variance-parameter sets for {} terms",
                theta.terms.len(),
                self.terms.len()
            )));
        }
        (0..self.terms.len())
            .map(|p| self.v_diag(p, &theta.terms[p], theta.sigma2))
            .collect()
    }
}

/// Block offsets of the stacked coefficient vector `[b; u_1; ...; u_P]`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub k: usize,
    pub widths: Vec<usize>,
    pub offsets: Vec<usize>,
    pub dim: usize,
}

impl Layout {
    pub fn new(k: usize, widths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(widths.len());
        let mut dim = k;
        for &w in widths {
            offsets.push(dim);
            dim += w;
        }
        Layout {
            k,
            widths: widths.to_vec(),
            offsets,
            dim,
        }
    }
}

/// The assembled system of one variance-parameter state.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub r: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub theta: VarianceParams,
    pub(crate) layout: Layout,
}

fn check_compatible(store: &InnerProductStore, spec: &ModelSpec) -> Result<()> {
    if !store.is_finalized() {
        return Err(SammError::InvalidInput(
            "store must be finalized before estimation".into(),
        ));
    }
    if store.widths() != spec.widths().as_slice() {
        return Err(SammError::ShapeMismatch(format!(
            "store widths {:?} do not match term widths {:?}",
            store.widths(),
            spec.widths()
        )));
    }
    for t in &spec.terms {
        if let TermKind::Svc { x_col } = t.kind {
            if x_col >= store.k() {
                return Err(SammError::InvalidParameter(format!(
                    "term '{}' references fixed-effect column {x_col} but X has {} columns",
                    t.name,
                    store.k()
                )));
            }
        }
    }
    Ok(())
}

/// Builds `R(Theta)` and the matching right-hand side from the store.
pub fn assemble_r(
    store: &InnerProductStore,
    spec: &ModelSpec,
    theta: &VarianceParams,
) -> Result<AssembledSystem> {
    check_compatible(store, spec)?;
    let v = spec.v_diags(theta)?;
    let layout = Layout::new(store.k(), &spec.widths());
    let mut r = DMatrix::<f64>::zeros(layout.dim, layout.dim);
    let mut rhs = DVector::<f64>::zeros(layout.dim);

    r.view_mut((0, 0), (layout.k, layout.k))
        .copy_from(&store.m_00);
    rhs.rows_mut(0, layout.k).copy_from(&store.m_0);

    for p in 0..spec.terms.len() {
        let off_p = layout.offsets[p];
        let w_p = layout.widths[p];
        // X'A_p V_p
        let m0p = &store.m_0p[p];
        for j in 0..w_p {
            for i in 0..layout.k {
                let val = m0p[(i, j)] * v[p][j];
                r[(i, off_p + j)] = val;
                r[(off_p + j, i)] = val;
            }
        }
        rhs.rows_mut(off_p, w_p)
            .copy_from(&store.m_p[p].component_mul(&v[p]));
        for q in p..spec.terms.len() {
            let off_q = layout.offsets[q];
            let w_q = layout.widths[q];
            let mpq = store.cross_ref(p, q);
            for j in 0..w_q {
                for i in 0..w_p {
                    let mut val = v[p][i] * mpq[(i, j)] * v[q][j];
                    if p == q && i == j {
                        val += 1.0;
                    }
                    r[(off_p + i, off_q + j)] = val;
                    if p != q {
                        r[(off_q + j, off_p + i)] = val;
                    }
                }
            }
        }
    }
    Ok(AssembledSystem {
        r,
        rhs,
        theta: theta.clone(),
        layout,
    })
}

/// Cholesky with jitter escalation `1e-10 .. 1e-6` times `trace/order`.
/// Returns the factor and the jitter that was needed.
pub(crate) fn chol_with_jitter(r: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(r.clone()) {
        return Ok((c, 0.0));
    }
    let order = r.nrows();
    let scale = (r.trace() / order as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = 1e-10;
    while rel <= 1e-6 * (1.0 + 1e-12) {
        let jitter = rel * scale;
        let mut jittered = r.clone();
        for i in 0..order {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    let mut min_diag = f64::INFINITY;
    let mut max_diag = f64::NEG_INFINITY;
    for i in 0..order {
        min_diag = min_diag.min(r[(i, i)]);
        max_diag = max_diag.max(r[(i, i)]);
    }
    Err(SammError::SingularSystem(format!(
        "factorization failed after jitter escalation to 1e-6 x trace/order; \
         order {order}, diagonal range [{min_diag:.3e}, {max_diag:.3e}], \
         condition estimate >= {:.3e}",
        max_diag / min_diag.abs().max(f64::MIN_POSITIVE)
    )))
}

fn logdet_from_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    2.0 * s
}

/// Solves `R x = rhs` and partitions the stacked coefficients.
pub fn solve_coefficients(system: &AssembledSystem) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let (chol, _) = chol_with_jitter(&system.r)?;
    let x = chol.solve(&system.rhs);
    Ok(split_coefficients(&system.layout, &x))
}

fn split_coefficients(layout: &Layout, x: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
    let b = x.rows(0, layout.k).into_owned();
    let us = layout
        .offsets
        .iter()
        .zip(&layout.widths)
        .map(|(&off, &w)| x.rows(off, w).into_owned())
        .collect();
    (b, us)
}

/// The compressed quadratic form `d(Theta) = m_yy - 2 x'rhs + x'Rx`, which
/// equals the residual-plus-penalty of the full-matrix formulation evaluated
/// at the same coefficients. Small negatives are clamped to zero.
pub fn compute_d(
    store: &InnerProductStore,
    system: &AssembledSystem,
    coefficients: &DVector<f64>,
) -> Result<f64> {
    let x = coefficients;
    let d = store.m_yy - 2.0 * x.dot(&system.rhs) + x.dot(&(&system.r * x));
    if d < -1e-8 * store.m_yy.abs() {
        return Err(SammError::NumericalInconsistency(format!(
            "quadratic form d = {d:.6e} is negative beyond tolerance (m_yy = {:.6e})",
            store.m_yy
        )));
    }
    Ok(d.max(0.0))
}

fn loglik_from_parts(logdet: f64, d: f64, n: usize, k: usize) -> Result<f64> {
    if d <= 0.0 {
        return Err(SammError::DegenerateLikelihood(
            "d(Theta) is zero: perfect fit leaves no residual scale".into(),
        ));
    }
    let nk = (n - k) as f64;
    Ok(-0.5 * logdet - 0.5 * nk * (1.0 + (2.0 * std::f64::consts::PI * d / nk).ln()))
}

/// Restricted log-likelihood via full assembly and factorization of `R`.
pub fn restricted_loglik(
    store: &InnerProductStore,
    spec: &ModelSpec,
    theta: &VarianceParams,
) -> Result<f64> {
    let n = store.n_seen();
    let k = store.k();
    if n <= k {
        return Err(SammError::InvalidInput(format!(
            "restricted likelihood needs N > K, got N = {n}, K = {k}"
        )));
    }
    let system = assemble_r(store, spec, theta)?;
    let (chol, _) = chol_with_jitter(&system.r)?;
    let x = chol.solve(&system.rhs);
    let d = compute_d(store, &system, &x)?;
    loglik_from_parts(logdet_from_chol(&chol), d, n, k)
}

/// Search-space controls of the coordinate-ascent REML.
#[derive(Debug, Clone)]
pub struct FitControls {
    /// Sweep-to-sweep improvement below this stops the outer loop.
    pub outer_tol: f64,
    pub max_sweeps: usize,
    /// Nelder-Mead function tolerance per term.
    pub nm_tol: f64,
    pub nm_max_iters: usize,
    /// Box for `ln(tau^2 / sigma_ref^2)`.
    pub log_tau2_box: (f64, f64),
    /// Box for `alpha`.
    pub alpha_box: (f64, f64),
    /// Use the cached block-factorization evaluator (`O(L_p^3)` per probe);
    /// the full-refactorization path exists as a reference.
    pub use_partial_update: bool,
}

impl Default for FitControls {
    fn default() -> Self {
        Self {
            outer_tol: 1e-5,
            max_sweeps: 20,
            nm_tol: 1e-6,
            nm_max_iters: 200,
            log_tau2_box: (-20.0, 20.0),
            alpha_box: (-10.0, 10.0),
            use_partial_update: true,
        }
    }
}

/// One `optimize_term` call in the ascent trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AscentStep {
    pub sweep: usize,
    pub term: usize,
    pub loglik_before: f64,
    pub loglik_after: f64,
    pub evals: usize,
}

/// Henderson covariance subsets needed for effect standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeBlock {
    pub term: usize,
    /// For SVC terms, the fixed-effect column whose coefficient pairs with
    /// the term; its row/column comes first in `cov`.
    pub x_col: Option<usize>,
    /// `sigma2_hat` times the matching subset of `R(Theta)^{-1}`.
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeBundle {
    /// `sigma2_hat (R^{-1})_{bb}`: the fixed-effect block.
    pub fixed: DMatrix<f64>,
    pub terms: Vec<SeBlock>,
}

/// Extracts the per-term covariance subsets `sigma2 R*_{k,p}`.
pub fn standard_errors(
    store: &InnerProductStore,
    spec: &ModelSpec,
    theta: &VarianceParams,
    sigma2_hat: f64,
) -> Result<SeBundle> {
    let system = assemble_r(store, spec, theta)?;
    let (chol, _) = chol_with_jitter(&system.r)?;
    let r_inv = chol.inverse();
    let layout = &system.layout;
    let fixed = r_inv.view((0, 0), (layout.k, layout.k)).into_owned() * sigma2_hat;
    let mut terms = Vec::with_capacity(spec.terms.len());
    for (p, t) in spec.terms.iter().enumerate() {
        let off = layout.offsets[p];
        let w = layout.widths[p];
        let x_col = match t.kind {
            TermKind::Svc { x_col } => Some(x_col),
            _ => None,
        };
        let cov = match x_col {
            Some(k_idx) => {
                let mut cov = DMatrix::<f64>::zeros(w + 1, w + 1);
                cov[(0, 0)] = r_inv[(k_idx, k_idx)];
                for i in 0..w {
                    cov[(0, i + 1)] = r_inv[(k_idx, off + i)];
                    cov[(i + 1, 0)] = r_inv[(off + i, k_idx)];
                    for j in 0..w {
                        cov[(i + 1, j + 1)] = r_inv[(off + i, off + j)];
                    }
                }
                cov * sigma2_hat
            }
            None => r_inv.view((off, off), (w, w)).into_owned() * sigma2_hat,
        };
        terms.push(SeBlock { term: p, x_col, cov });
    }
    Ok(SeBundle { fixed, terms })
}

/// Estimated model: coefficients, variance parameters, likelihood, and the
/// standard-error blocks needed to reconstruct effect uncertainty anywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub b_hat: DVector<f64>,
    pub u_hat: Vec<DVector<f64>>,
    pub theta_hat: VarianceParams,
    pub sigma2_hat: f64,
    pub loglik_r: f64,
    pub n_sweeps: usize,
    pub converged: bool,
    pub se: SeBundle,
    pub ascent_trace: Vec<AscentStep>,
    /// Terms whose fitted variance ratio fell below `1e-12`.
    pub dropped_terms: Vec<usize>,
    pub sigma2_ols: f64,
    pub d_value: f64,
    pub n: usize,
    pub k: usize,
}

/// Coordinates of one term in the optimizer's search space:
/// `[ln(tau^2/sigma_ref^2), alpha]` for spatial terms, the log-ratio alone
/// for group terms.
fn theta_to_coords(theta_p: &ThetaTerm, sigma2_ref: f64, controls: &FitControls) -> Vec<f64> {
    let (lo, hi) = controls.log_tau2_box;
    let s = |tau: f64| -> f64 {
        let ratio2 = (tau * tau / sigma2_ref).max(f64::MIN_POSITIVE);
        ratio2.ln().clamp(lo, hi)
    };
    match *theta_p {
        ThetaTerm::Spatial { tau, alpha } => vec![s(tau), alpha.clamp(controls.alpha_box.0, controls.alpha_box.1)],
        ThetaTerm::Group { tau } => vec![s(tau)],
    }
}

fn coords_to_theta(kind: &TermKind, coords: &[f64], sigma2_ref: f64) -> ThetaTerm {
    let tau = ((coords[0]).exp() * sigma2_ref).sqrt();
    match kind {
        TermKind::Group => ThetaTerm::Group { tau },
        _ => ThetaTerm::Spatial {
            tau,
            alpha: coords[1],
        },
    }
}

/// Outcome of one term-wise maximization.
#[derive(Debug, Clone)]
pub struct TermOpt {
    pub theta_p: ThetaTerm,
    pub loglik_before: f64,
    pub loglik_after: f64,
    pub evals: usize,
}

/// Maximizes the restricted likelihood over term `p` with every other
/// parameter held fixed. The returned parameters never decrease the
/// likelihood: the incumbent is one of the candidate points.
pub fn optimize_term(
    store: &InnerProductStore,
    spec: &ModelSpec,
    theta: &VarianceParams,
    p: usize,
    controls: &FitControls,
    standard_restarts: bool,
) -> Result<TermOpt> {
    let sigma2_ref = theta.sigma2;
    let term = &spec.terms[p];
    let is_spatial = term.is_spatial();

    let incumbent = theta_to_coords(&theta.terms[p], sigma2_ref, controls);
    let mut starts = vec![incumbent.clone()];
    if standard_restarts {
        let half = 0.5f64.ln();
        if is_spatial {
            starts.push(vec![half, 0.0]);
            starts.push(vec![half, 1.0]);
        } else {
            starts.push(vec![half]);
        }
    }
    let (lo, hi, step) = if is_spatial {
        (
            vec![controls.log_tau2_box.0, controls.alpha_box.0],
            vec![controls.log_tau2_box.1, controls.alpha_box.1],
            vec![1.0, 0.5],
        )
    } else {
        (
            vec![controls.log_tau2_box.0],
            vec![controls.log_tau2_box.1],
            vec![1.0],
        )
    };

    let nm_opts = NmOptions {
        f_tol: controls.nm_tol,
        max_iters: controls.nm_max_iters,
    };
    let mut probe_trace: Vec<(Vec<f64>, f64)> = Vec::new();
    let record = |trace: &mut Vec<(Vec<f64>, f64)>, x: &[f64], f: f64| {
        if trace.len() < 64 {
            trace.push((x.to_vec(), f));
        }
    };

    let (before, outcome) = if controls.use_partial_update {
        let cond = TermConditioner::new(store, spec, theta, p)?;
        let before = cond.eval_coords(&incumbent, sigma2_ref);
        let outcome = maximize(
            |x| {
                let f = cond.eval_coords(x, sigma2_ref);
                record(&mut probe_trace, x, f);
                f
            },
            &starts,
            &lo,
            &hi,
            &step,
            &nm_opts,
        );
        (before, outcome)
    } else {
        let eval_full = |x: &[f64]| -> f64 {
            let mut trial = theta.clone();
            trial.terms[p] = coords_to_theta(&term.kind, x, sigma2_ref);
            restricted_loglik(store, spec, &trial).unwrap_or(f64::NEG_INFINITY)
        };
        let before = eval_full(&incumbent);
        let outcome = maximize(
            |x| {
                let f = eval_full(x);
                record(&mut probe_trace, x, f);
                f
            },
            &starts,
            &lo,
            &hi,
            &step,
            &nm_opts,
        );
        (before, outcome)
    };

    if !outcome.f.is_finite() && !before.is_finite() {
        return Err(SammError::OptimizationFailure(format!(
            "term '{}': likelihood non-finite at every probe; first probes: {:?}",
            term.name,
            &probe_trace[..probe_trace.len().min(8)]
        )));
    }

    // Keep the incumbent when nothing beat it.
    let (theta_new, after) = if outcome.f >= before {
        (
            coords_to_theta(&term.kind, &outcome.x, sigma2_ref),
            outcome.f,
        )
    } else {
        (theta.terms[p], before)
    };
    Ok(TermOpt {
        theta_p: theta_new,
        loglik_before: before,
        loglik_after: after,
        evals: outcome.evals,
    })
}

/// OLS on the fixed-effect block of the store: `(b, rss)`.
fn ols_from_store(store: &InnerProductStore) -> Result<(DVector<f64>, f64)> {
    let (chol, _) = chol_with_jitter(&store.m_00)?;
    let b = chol.solve(&store.m_0);
    let rss = (store.m_yy - store.m_0.dot(&b)).max(0.0);
    Ok((b, rss))
}

/// Full coordinate-ascent REML fit.
///
/// Sweeps `optimize_term` over the terms until a sweep improves the
/// likelihood by less than `outer_tol` or `max_sweeps` is reached, then
/// solves the coefficients, sets `sigma2 = d/(N-K)`, and extracts the
/// standard-error blocks. Non-convergence is a flagged result, not an error.
pub fn fit(
    store: &InnerProductStore,
    spec: &ModelSpec,
    init: Option<VarianceParams>,
    controls: &FitControls,
) -> Result<FitResult> {
    check_compatible(store, spec)?;
    let n = store.n_seen();
    let k = store.k();
    if n <= k {
        return Err(SammError::InvalidInput(format!(
            "fit needs N > K, got N = {n}, K = {k}"
        )));
    }
    let (b_ols, rss) = ols_from_store(store)?;
    let sigma2_ols = rss / (n - k) as f64;
    let n_terms = spec.terms.len();

    if n_terms == 0 {
        if sigma2_ols <= 0.0 {
            return Err(SammError::DegenerateLikelihood(
                "exact linear fit: residual variance is zero".into(),
            ));
        }
        let system = assemble_r(store, spec, &VarianceParams::new(vec![], sigma2_ols)?)?;
        let (chol, _) = chol_with_jitter(&system.r)?;
        let loglik = loglik_from_parts(logdet_from_chol(&chol), rss, n, k)?;
        let theta_hat = VarianceParams::new(vec![], sigma2_ols)?;
        let se = standard_errors(store, spec, &theta_hat, sigma2_ols)?;
        return Ok(FitResult {
            b_hat: b_ols,
            u_hat: vec![],
            theta_hat,
            sigma2_hat: sigma2_ols,
            loglik_r: loglik,
            n_sweeps: 0,
            converged: true,
            se,
            ascent_trace: vec![],
            dropped_terms: vec![],
            sigma2_ols,
            d_value: rss,
            n,
            k,
        });
    }

    if sigma2_ols <= 0.0 {
        return Err(SammError::DegenerateLikelihood(
            "fixed effects alone fit the data exactly; variance terms are unidentified".into(),
        ));
    }

    // sigma2 acts as the fixed reference scale during the sweeps: only the
    // ratio tau/sigma enters V, so the final sigma2 rescales tau afterwards.
    let sigma2_ref = sigma2_ols;
    let mut theta = match init {
        Some(mut t) => {
            if t.terms.len() != n_terms {
                return Err(SammError::ShapeMismatch(format!(
                    "initial theta has {} terms, model has {n_terms}",
                    t.terms.len()
                )));
            }
            t.sigma2 = sigma2_ref;
            t
        }
        None => {
            let tau0 = (sigma2_ols / (2.0 * n_terms as f64)).sqrt();
            let terms = spec
                .terms
                .iter()
                .map(|t| match t.kind {
                    TermKind::Group => ThetaTerm::Group { tau: tau0 },
                    _ => ThetaTerm::Spatial {
                        tau: tau0,
                        alpha: 0.0,
                    },
                })
                .collect();
            VarianceParams::new(terms, sigma2_ref)?
        }
    };

    let mut trace: Vec<AscentStep> = Vec::new();
    let mut current = restricted_loglik(store, spec, &theta)?;
    let mut converged = false;
    let mut n_sweeps = 0usize;

    for sweep in 1..=controls.max_sweeps {
        let sweep_start = current;
        for p in 0..n_terms {
            let out = optimize_term(store, spec, &theta, p, controls, sweep == 1)?;
            theta.terms[p] = out.theta_p;
            current = out.loglik_after;
            trace.push(AscentStep {
                sweep,
                term: p,
                loglik_before: out.loglik_before,
                loglik_after: out.loglik_after,
                evals: out.evals,
            });
        }
        n_sweeps = sweep;
        if current - sweep_start < controls.outer_tol {
            converged = true;
            break;
        }
    }

    // Final solve under the estimated ratios.
    let system = assemble_r(store, spec, &theta)?;
    let (chol, _) = chol_with_jitter(&system.r)?;
    let x = chol.solve(&system.rhs);
    let d = compute_d(store, &system, &x)?;
    if d <= 0.0 {
        return Err(SammError::DegenerateLikelihood(
            "fitted model leaves zero residual quadratic form".into(),
        ));
    }
    let loglik_r = loglik_from_parts(logdet_from_chol(&chol), d, n, k)?;
    let sigma2_hat = d / (n - k) as f64;

    // Rescale tau from the reference sigma to the estimated sigma.
    let sigma_scale = (sigma2_hat / sigma2_ref).sqrt();
    let mut dropped = Vec::new();
    let final_terms: Vec<ThetaTerm> = theta
        .terms
        .iter()
        .enumerate()
        .map(|(p, t)| {
            let ratio2 = t.tau() * t.tau() / sigma2_ref;
            if ratio2 < 1e-12 {
                dropped.push(p);
            }
            match *t {
                ThetaTerm::Spatial { tau, alpha } => ThetaTerm::Spatial {
                    tau: tau * sigma_scale,
                    alpha,
                },
                ThetaTerm::Group { tau } => ThetaTerm::Group {
                    tau: tau * sigma_scale,
                },
            }
        })
        .collect();
    let theta_hat = VarianceParams::new(final_terms, sigma2_hat)?;

    let (b_hat, u_hat) = split_coefficients(&system.layout, &x);
    let se = standard_errors(store, spec, &theta_hat, sigma2_hat)?;

    Ok(FitResult {
        b_hat,
        u_hat,
        theta_hat,
        sigma2_hat,
        loglik_r,
        n_sweeps,
        converged,
        se,
        ascent_trace: trace,
        dropped_terms: dropped,
        sigma2_ols,
        d_value: d,
        n,
        k,
    })
}
