//! Moran-eigenvector basis machinery: exponential kernel, MST range heuristic,
//! inducing points, knot-level eigendecomposition, and Nystrom row generation.
//!
//! The basis is anchored at `L` inducing points (knots). Eigenpairs of the
//! doubly centered knot kernel are computed once; rows of the approximate
//! eigenvector matrix can then be generated for any coordinate block, which is
//! what makes block-wise streaming possible.

mod kmeans;
mod moran;
mod mst;

pub use kmeans::{select_centers, select_knots, select_knots_with, KmeansOptions};
pub use moran::{expected_mc, moran_coefficient, ProximityMatrix};
pub use mst::mst_range;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SammError};

/// Relative retention floor for eigenvalues: entries at or below
/// `1e-8 * lambda_max` are dropped (double centering always produces a
/// numerically-zero eigenvalue that must be excluded deterministically).
pub const EIGENVALUE_FLOOR_REL: f64 = 1e-8;

/// Default cap on retained eigenpairs.
pub const DEFAULT_MAX_EIGENPAIRS: usize = 200;

/// Largest sample size for which the MST range is computed over the sample
/// sites themselves; above it the knot centers are used instead so that no
/// O(N^2) pass over the data is ever required.
pub const MST_SITE_LIMIT: usize = 100_000;

/// Where the kernel range `r` was measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeSource {
    SampleSites,
    KnotCenters,
}

pub fn range_source_for(n: usize) -> RangeSource {
    if n <= MST_SITE_LIMIT {
        RangeSource::SampleSites
    } else {
        RangeSource::KnotCenters
    }
}

/// Planar observation coordinates in a common projected unit.
#[derive(Debug, Clone)]
pub struct SiteSet {
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    /// Duplicate sites are allowed; non-finite coordinates are not.
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(SammError::InvalidInput("site set is empty".into()));
        }
        if let Some(i) = coords
            .iter()
            .position(|c| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(SammError::InvalidInput(format!(
                "non-finite coordinate at site {i}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

/// Inducing points plus the kernel range `r`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotSet {
    pub centers: Vec<[f64; 2]>,
    pub range_r: f64,
}

impl KnotSet {
    pub fn new(centers: Vec<[f64; 2]>, range_r: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(SammError::InvalidInput("knot set is empty".into()));
        }
        if centers
            .iter()
            .any(|c| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(SammError::InvalidInput(
                "non-finite knot coordinate".into(),
            ));
        }
        if !(range_r.is_finite() && range_r > 0.0) {
            return Err(SammError::InvalidParameter(format!(
                "kernel range must be positive and finite, got {range_r}"
            )));
        }
        Ok(Self { centers, range_r })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// The exponential distance-decay kernel `exp(-d/r)`.
///
/// Strictly decreasing in `d`, equal to 1 at `d = 0`.
pub fn exp_kernel(d: f64, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(SammError::InvalidParameter(format!(
            "kernel range must be positive and finite, got {r}"
        )));
    }
    if !(d.is_finite() && d >= 0.0) {
        return Err(SammError::InvalidParameter(format!(
            "kernel distance must be nonnegative and finite, got {d}"
        )));
    }
    Ok((-d / r).exp())
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Kernel vector from one site to every knot (the row `c(s_i)'`).
#[inline]
fn kernel_row_into(out: &mut [f64], site: [f64; 2], centers: &[[f64; 2]], r: f64) {
    debug_assert_eq!(out.len(), centers.len());
    for (o, &c) in out.iter_mut().zip(centers) {
        *o = (-dist(site, c) / r).exp();
    }
}

/// Eigenpairs of the doubly centered knot kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotEigen {
    /// `L x L_pos` orthonormal eigenvector columns (each sums to zero).
    pub vectors: DMatrix<f64>,
    /// Retained positive eigenvalues, strictly descending.
    pub values: DVector<f64>,
    /// The `1 x L` row `(1'_L C_L) / L`.
    pub col_mean_row: RowDVector<f64>,
    pub l: usize,
    pub l_pos: usize,
}

/// Eigendecomposes `M_L C_L M_L` where `C_L` is the unit-diagonal kernel
/// matrix among the knots and `M_L = I - 11'/L`. Retains eigenpairs above the
/// retention floor, capped at [`DEFAULT_MAX_EIGENPAIRS`].
pub fn knot_eigen(knots: &KnotSet) -> Result<KnotEigen> {
    knot_eigen_with_cap(knots, DEFAULT_MAX_EIGENPAIRS)
}

pub fn knot_eigen_with_cap(knots: &KnotSet, max_pairs: usize) -> Result<KnotEigen> {
    let l = knots.len();
    if l < 2 {
        return Err(SammError::InvalidParameter(format!(
            "knot eigendecomposition needs at least 2 knots, got {l}"
        )));
    }
    if max_pairs == 0 {
        return Err(SammError::InvalidParameter(
            "eigenpair cap must be at least 1".into(),
        ));
    }
    let r = knots.range_r;
    let mut c = DMatrix::<f64>::zeros(l, l);
    for i in 0..l {
        c[(i, i)] = 1.0;
        for j in (i + 1)..l {
            let k = (-dist(knots.centers[i], knots.centers[j]) / r).exp();
            c[(i, j)] = k;
            c[(j, i)] = k;
        }
    }
    let col_mean_row = RowDVector::from_fn(l, |_, j| c.column(j).sum() / l as f64);

    // Double centering: B = C - rowmean 1' - 1 colmean' + grandmean, then
    // explicit symmetrization before the symmetric solver.
    let grand = col_mean_row.sum() / l as f64;
    let mut b = c;
    for i in 0..l {
        let ri = col_mean_row[i]; // C symmetric: row mean equals column mean
        for j in 0..l {
            b[(i, j)] += grand - ri - col_mean_row[j];
        }
    }
    for i in 0..l {
        for j in (i + 1)..l {
            let s = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = s;
            b[(j, i)] = s;
        }
    }

    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });

    let lambda_max = eig.eigenvalues[order[0]];
    let floor = EIGENVALUE_FLOOR_REL * lambda_max;
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(SammError::EmptyBasis(format!(
            "largest eigenvalue {lambda_max:.3e} for {l} knots with range {r:.3e}"
        )));
    }

    let retained: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > floor)
        .take(max_pairs.min(l - 1))
        .collect();
    if retained.is_empty() {
        return Err(SammError::EmptyBasis(format!(
            "no eigenvalue above floor {floor:.3e} for {l} knots with range {r:.3e}"
        )));
    }

    let l_pos = retained.len();
    let mut vectors = DMatrix::<f64>::zeros(l, l_pos);
    let mut values = DVector::<f64>::zeros(l_pos);
    for (out_col, &src_col) in retained.iter().enumerate() {
        values[out_col] = eig.eigenvalues[src_col];
        let col = eig.eigenvectors.column(src_col);
        // Reproducible sign: largest-magnitude entry made positive.
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        vectors.column_mut(out_col).copy_from(&(col * sign));
    }

    Ok(KnotEigen {
        vectors,
        values,
        col_mean_row,
        l,
        l_pos,
    })
}

/// How the approximate eigenvalues are scaled up from the knot eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// `(N + L)/L (lambda + 1) - 1`
    #[default]
    AsPrinted,
    /// `N/L (lambda + 1) - 1`
    NOverL,
}

impl std::fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalingMode::AsPrinted => write!(f, "as_printed"),
            ScalingMode::NOverL => write!(f, "n_over_l"),
        }
    }
}

impl std::str::FromStr for ScalingMode {
    type Err = SammError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_printed" => Ok(ScalingMode::AsPrinted),
            "n_over_l" => Ok(ScalingMode::NOverL),
            other => Err(SammError::InvalidParameter(format!(
                "unknown scaling mode '{other}' (expected as_printed or n_over_l)"
            ))),
        }
    }
}

/// Approximate eigenvalues for a sample of size `n`, descending. Entries at
/// or below the retention floor are dropped (their eigenvectors must be
/// dropped with them, which [`BasisFactory::new`] handles by truncation).
pub fn approx_eigenvalues(eig: &KnotEigen, n: usize, mode: ScalingMode) -> Result<DVector<f64>> {
    let l = eig.l;
    if n < l {
        return Err(SammError::InvalidParameter(format!(
            "sample size {n} is smaller than the knot count {l}"
        )));
    }
    let factor = match mode {
        ScalingMode::AsPrinted => (n + l) as f64 / l as f64,
        ScalingMode::NOverL => n as f64 / l as f64,
    };
    let raw: Vec<f64> = eig
        .values
        .iter()
        .map(|&lam| factor * (lam + 1.0) - 1.0)
        .collect();
    let max = raw[0];
    if !(max.is_finite() && max > 0.0) {
        return Err(SammError::EmptyBasis(format!(
            "largest approximate eigenvalue {max:.3e} is not positive"
        )));
    }
    let floor = EIGENVALUE_FLOOR_REL * max;
    let keep = raw.iter().take_while(|&&v| v > floor).count();
    Ok(DVector::from_vec(raw[..keep].to_vec()))
}

/// Immutable generator of approximate Moran eigenvector rows.
///
/// Safe for concurrent read; row generation is a pure function of the
/// coordinates, so any partition of sites into blocks yields identical
/// stacked output.
#[derive(Debug, Clone)]
pub struct BasisFactory {
    pub knots: KnotSet,
    pub eig: KnotEigen,
    /// Intended total sample size (enters the eigenvalue scaling).
    pub n: usize,
    /// Approximate eigenvalues, descending.
    pub lambda_hat: DVector<f64>,
    pub scaling_mode: ScalingMode,
    /// `E_L (Lambda_L + I)^{-1}`, truncated to the retained columns.
    weights: DMatrix<f64>,
}

impl BasisFactory {
    pub fn new(knots: KnotSet, eig: KnotEigen, n: usize, scaling_mode: ScalingMode) -> Result<Self> {
        let lambda_hat = approx_eigenvalues(&eig, n, scaling_mode)?;
        let keep = lambda_hat.len();
        let mut weights = DMatrix::<f64>::zeros(eig.l, keep);
        for col in 0..keep {
            let scale = 1.0 / (eig.values[col] + 1.0);
            weights
                .column_mut(col)
                .copy_from(&(eig.vectors.column(col) * scale));
        }
        Ok(Self {
            knots,
            eig,
            n,
            lambda_hat,
            scaling_mode,
            weights,
        })
    }

    /// Number of basis columns this factory generates.
    pub fn l_pos(&self) -> usize {
        self.lambda_hat.len()
    }
}

/// Generates the approximate eigenvector rows for one coordinate block:
/// row i = `[c(s_i)' - col_mean_row] E_L (Lambda_L + I)^{-1}`.
pub fn nystrom_block(factory: &BasisFactory, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    if coords.is_empty() {
        return Err(SammError::InvalidInput("empty coordinate block".into()));
    }
    if let Some(i) = coords
        .iter()
        .position(|c| !c[0].is_finite() || !c[1].is_finite())
    {
        return Err(SammError::InvalidInput(format!(
            "non-finite coordinate at block row {i}"
        )));
    }
    let l = factory.knots.len();
    let r = factory.knots.range_r;
    let nb = coords.len();
    let mut centered = DMatrix::<f64>::zeros(nb, l);
    let mut row = vec![0.0; l];
    for (i, &site) in coords.iter().enumerate() {
        kernel_row_into(&mut row, site, &factory.knots.centers, r);
        for j in 0..l {
            centered[(i, j)] = row[j] - factory.eig.col_mean_row[j];
        }
    }
    Ok(centered * &factory.weights)
}

#[cfg(test)]
mod tests;
