use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SammError};

/// Dense symmetric nonnegative proximity matrix. Diagnostic-scale only: the
/// estimation pipeline never materializes an `N x N` matrix.
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    matrix: DMatrix<f64>,
    zero_diagonal: bool,
}

impl ProximityMatrix {
    const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(matrix: DMatrix<f64>, zero_diagonal: bool) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(SammError::ShapeMismatch(format!(
                "proximity matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let n = matrix.nrows();
        for i in 0..n {
            let expect = if zero_diagonal { 0.0 } else { 1.0 };
            if matrix[(i, i)] != expect {
                return Err(SammError::InvalidInput(format!(
                    "diagonal entry ({i},{i}) is {} but must be exactly {expect}",
                    matrix[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                let a = matrix[(i, j)];
                let b = matrix[(j, i)];
                if a < 0.0 || !a.is_finite() {
                    return Err(SammError::InvalidInput(format!(
                        "entry ({i},{j}) is {a}; proximities must be finite and nonnegative"
                    )));
                }
                if (a - b).abs() > Self::SYMMETRY_TOL {
                    return Err(SammError::InvalidInput(format!(
                        "asymmetry at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self {
            matrix,
            zero_diagonal,
        })
    }

    /// Exponential-kernel proximity among `sites` with a zero diagonal
    /// (the classical Moran weights matrix).
    pub fn kernel_zero_diag(sites: &[[f64; 2]], range_r: f64) -> Result<Self> {
        if !(range_r.is_finite() && range_r > 0.0) {
            return Err(SammError::InvalidParameter(format!(
                "kernel range must be positive and finite, got {range_r}"
            )));
        }
        let n = sites.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = sites[i][0] - sites[j][0];
                let dy = sites[i][1] - sites[j][1];
                let k = (-(dx * dx + dy * dy).sqrt() / range_r).exp();
                m[(i, j)] = k;
                m[(j, i)] = k;
            }
        }
        Self::new(m, true)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn zero_diagonal(&self) -> bool {
        self.zero_diagonal
    }

    /// `1' C 1`, the total weight.
    pub fn total_weight(&self) -> f64 {
        self.matrix.sum()
    }
}

/// The Moran coefficient `(n / 1'C1) (v'M C M v) / (v'M v)` with
/// `M = I - 11'/n`. Positive for similar neighbors, near `-1/(n-1)` under
/// independence.
pub fn moran_coefficient(values: &DVector<f64>, c0: &ProximityMatrix) -> Result<f64> {
    let n = c0.n();
    if values.len() != n {
        return Err(SammError::ShapeMismatch(format!(
            "value vector has length {} but proximity matrix is {n}x{n}",
            values.len()
        )));
    }
    if n < 2 {
        return Err(SammError::InvalidInput(
            "Moran coefficient needs at least 2 observations".into(),
        ));
    }
    if !c0.zero_diagonal() {
        return Err(SammError::InvalidInput(
            "Moran coefficient requires a zero-diagonal proximity matrix".into(),
        ));
    }
    let total = c0.total_weight();
    if total <= 0.0 {
        return Err(SammError::DegenerateWeights(
            "proximity matrix has zero total weight".into(),
        ));
    }
    let mean = values.mean();
    let centered = values.map(|v| v - mean);
    let denom = centered.dot(&centered);
    if denom <= 0.0 {
        return Err(SammError::DegenerateInput(
            "constant value vector has no spatial variation".into(),
        ));
    }
    // M C M v == M C (M v) and v' M = (M v)' since M is symmetric idempotent.
    let numer = centered.dot(&(c0.matrix() * &centered));
    Ok((n as f64 / total) * (numer / denom))
}

/// Expected Moran coefficient of the eigenvector process at scale parameter
/// `alpha`: `mc_scale * sum(lambda^(2a+1)) / sum(lambda^(2a))`, evaluated in
/// log-space. Monotone nondecreasing in `alpha`, bounded by
/// `mc_scale * lambda_min` and `mc_scale * lambda_max`.
pub fn expected_mc(lambdas: &[f64], alpha: f64, mc_scale: f64) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(SammError::InvalidInput(
            "expected MC needs at least one eigenvalue".into(),
        ));
    }
    if lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(SammError::InvalidInput(
            "expected MC needs strictly positive finite eigenvalues".into(),
        ));
    }
    if !alpha.is_finite() {
        return Err(SammError::InvalidParameter(format!(
            "alpha must be finite, got {alpha}"
        )));
    }
    let logs: Vec<f64> = lambdas.iter().map(|&l| l.ln()).collect();
    let log_num = log_sum_exp(&logs, 2.0 * alpha + 1.0);
    let log_den = log_sum_exp(&logs, 2.0 * alpha);
    Ok(mc_scale * (log_num - log_den).exp())
}

/// `ln sum_l exp(beta * logs[l])`, shifted by the max term.
fn log_sum_exp(logs: &[f64], beta: f64) -> f64 {
    let max = logs
        .iter()
        .map(|&l| beta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|&l| (beta * l - max).exp()).sum();
    max + sum.ln()
}
