//! Additive-term declarations and their per-block basis matrices.
//!
//! A term is a residual spatial process, a spatially varying coefficient
//! (SVC), or a group random intercept. Each produces an `n_b x L_p` basis
//! block for a data block and a diagonal scaling matrix `V(theta_p)`.

use std::collections::BTreeMap;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{nystrom_block, BasisFactory};
use crate::error::{Result, SammError};
use crate::memtrack::{self, BasisAllocation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    /// Residual spatial dependence: the basis block is the approximate Moran
    /// eigenvector block itself.
    ResidualSpatial,
    /// Spatially varying coefficient for the fixed-effect column `x_col`;
    /// the constant mean of the coefficient lives in `X`, the spatial
    /// deviation lives here.
    Svc { x_col: usize },
    /// Exchangeable random intercept per group label.
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    /// Basis width `L_p`: the retained eigenpair count for spatial kinds,
    /// the group count for group terms.
    pub width: usize,
    pub name: String,
}

impl TermSpec {
    pub fn residual_spatial(width: usize) -> Self {
        Self {
            kind: TermKind::ResidualSpatial,
            width,
            name: "spatial".into(),
        }
    }

    pub fn svc(name: impl Into<String>, x_col: usize, width: usize) -> Self {
        Self {
            kind: TermKind::Svc { x_col },
            width,
            name: name.into(),
        }
    }

    pub fn group(name: impl Into<String>, group_count: usize) -> Self {
        Self {
            kind: TermKind::Group,
            width: group_count,
            name: name.into(),
        }
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(self.kind, TermKind::Group)
    }
}

/// Variance parameters of one term. Spatial kinds carry `(tau, alpha)`;
/// group terms carry `tau` alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaTerm {
    Spatial { tau: f64, alpha: f64 },
    Group { tau: f64 },
}

impl ThetaTerm {
    pub fn tau(&self) -> f64 {
        match *self {
            ThetaTerm::Spatial { tau, .. } | ThetaTerm::Group { tau } => tau,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            ThetaTerm::Spatial { alpha, .. } => Some(alpha),
            ThetaTerm::Group { .. } => None,
        }
    }
}

/// Full variance-parameter state: one entry per term plus the global
/// residual variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub terms: Vec<ThetaTerm>,
    pub sigma2: f64,
}

impl VarianceParams {
    pub fn new(terms: Vec<ThetaTerm>, sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(SammError::InvalidParameter(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        for (p, t) in terms.iter().enumerate() {
            if !(t.tau().is_finite() && t.tau() >= 0.0) {
                return Err(SammError::InvalidParameter(format!(
                    "tau of term {p} must be nonnegative and finite"
                )));
            }
            if let Some(a) = t.alpha() {
                if !a.is_finite() {
                    return Err(SammError::InvalidParameter(format!(
                        "alpha of term {p} must be finite"
                    )));
                }
            }
        }
        Ok(Self { terms, sigma2 })
    }
}

/// Diagonal of `V(theta_p)`: `(tau_p / sigma) lambda_hat^alpha_p` for spatial
/// kinds, `(tau_g / sigma) I` for group terms.
pub fn v_matrix(term: &TermSpec, theta: &ThetaTerm, sigma2: f64, lambda_hat: &DVector<f64>) -> Result<DVector<f64>> {
    let sigma = sigma2.sqrt();
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SammError::ParameterOutOfRange(format!(
            "sigma must be positive, got sigma2 = {sigma2}"
        )));
    }
    match (&term.kind, theta) {
        (TermKind::Group, ThetaTerm::Group { tau }) => {
            let v = tau / sigma;
            if !v.is_finite() {
                return Err(SammError::ParameterOutOfRange(format!(
                    "group scale tau/sigma = {v} is not finite"
                )));
            }
            Ok(DVector::from_element(term.width, v))
        }
        (TermKind::ResidualSpatial | TermKind::Svc { .. }, ThetaTerm::Spatial { tau, alpha }) => {
            if lambda_hat.len() != term.width {
                return Err(SammError::ShapeMismatch(format!(
                    "term '{}' has width {} but {} approximate eigenvalues were supplied",
                    term.name,
                    term.width,
                    lambda_hat.len()
                )));
            }
            let ratio = tau / sigma;
            let mut v = DVector::zeros(term.width);
            for (out, &lam) in v.iter_mut().zip(lambda_hat.iter()) {
                let scaled = ratio * lam.powf(*alpha);
                if !scaled.is_finite() {
                    return Err(SammError::ParameterOutOfRange(format!(
                        "term '{}': lambda^alpha overflows at lambda = {lam}, alpha = {alpha}",
                        term.name
                    )));
                }
                *out = scaled;
            }
            Ok(v)
        }
        _ => Err(SammError::InvalidParameter(format!(
            "variance parameters of term '{}' do not match its kind",
            term.name
        ))),
    }
}

/// Ordered distinct group labels. Built in a dedicated first pass over the
/// data; stores only the label set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroupIndex {
    labels: Vec<String>,
    #[serde(skip)]
    positions: BTreeMap<String, usize>,
}

impl GroupIndex {
    /// Collects the distinct labels in sorted order.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: std::collections::BTreeSet<&str> = labels.into_iter().collect();
        if set.is_empty() {
            return Err(SammError::EmptyData("no group labels observed".into()));
        }
        Ok(Self::from_sorted(set.into_iter().map(String::from).collect()))
    }

    pub fn from_sorted(labels: Vec<String>) -> Self {
        let positions = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, positions }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.positions = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.positions.get(label).copied()
    }
}

/// One term's basis block for one data block. Carries its allocation
/// registration so peak basis memory stays observable.
#[derive(Debug)]
pub struct TermBlock {
    values: DMatrix<f64>,
    _alloc: BasisAllocation,
}

impl TermBlock {
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let _alloc = memtrack::track_basis(values.nrows(), values.ncols());
        Self { values, _alloc }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

impl Deref for TermBlock {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &Self::Target {
        &self.values
    }
}

/// Builds `A_p` rows for one data block: the Moran eigenvector block for
/// residual terms, covariate-scaled eigenvector rows for SVC terms, and 0/1
/// dummies for group terms.
pub fn build_term_block(
    term: &TermSpec,
    factory: Option<&BasisFactory>,
    coords: &[[f64; 2]],
    covariate: Option<&[f64]>,
    labels: Option<&[String]>,
    group_index: Option<&GroupIndex>,
) -> Result<TermBlock> {
    let n_b = coords.len();
    let values = match &term.kind {
        TermKind::ResidualSpatial => {
            let f = factory.ok_or_else(|| {
                SammError::InvalidInput(format!("term '{}' needs a basis factory", term.name))
            })?;
            expect_width(term, f.l_pos())?;
            nystrom_block(f, coords)?
        }
        TermKind::Svc { .. } => {
            let f = factory.ok_or_else(|| {
                SammError::InvalidInput(format!("term '{}' needs a basis factory", term.name))
            })?;
            expect_width(term, f.l_pos())?;
            let x = covariate.ok_or_else(|| {
                SammError::InvalidInput(format!("term '{}' needs its covariate block", term.name))
            })?;
            if x.len() != n_b {
                return Err(SammError::InvalidInput(format!(
                    "term '{}': covariate block has {} rows, coordinates have {n_b}",
                    term.name,
                    x.len()
                )));
            }
            let mut block = nystrom_block(f, coords)?;
            for (i, &xi) in x.iter().enumerate() {
                block.row_mut(i).scale_mut(xi);
            }
            block
        }
        TermKind::Group => {
            let idx = group_index.ok_or_else(|| {
                SammError::InvalidInput(format!("term '{}' needs a group index", term.name))
            })?;
            expect_width(term, idx.len())?;
            let lab = labels.ok_or_else(|| {
                SammError::InvalidInput(format!("term '{}' needs a label block", term.name))
            })?;
            if lab.len() != n_b {
                return Err(SammError::InvalidInput(format!(
                    "term '{}': label block has {} rows, coordinates have {n_b}",
                    term.name,
                    lab.len()
                )));
            }
            let mut block = DMatrix::<f64>::zeros(n_b, idx.len());
            for (i, label) in lab.iter().enumerate() {
                let g = idx
                    .position(label)
                    .ok_or_else(|| SammError::UnknownGroup(label.clone()))?;
                block[(i, g)] = 1.0;
            }
            block
        }
    };
    Ok(TermBlock::from_matrix(values))
}

fn expect_width(term: &TermSpec, actual: usize) -> Result<()> {
    if term.width != actual {
        return Err(SammError::ShapeMismatch(format!(
            "term '{}' declares width {} but the data provides {actual}",
            term.name, term.width
        )));
    }
    Ok(())
}
