use thiserror::Error;

/// Errors produced by model construction, accumulation, and estimation.
#[derive(Debug, Error)]
pub enum SammError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no eigenvalue above the retention floor: {0}")]
    EmptyBasis(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("unknown group label '{0}'")]
    UnknownGroup(String),

    #[error("unknown term: {0}")]
    UnknownTerm(String),

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("degenerate likelihood: {0}")]
    DegenerateLikelihood(String),

    #[error("optimization failure: {0}")]
    OptimizationFailure(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SammError>;

impl SammError {
    /// Exit-code class used by the command-line frontend:
    /// 2 for data problems, 3 for numerical failures.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SammError::SingularSystem(_)
                | SammError::NumericalInconsistency(_)
                | SammError::DegenerateLikelihood(_)
                | SammError::OptimizationFailure(_)
                | SammError::ParameterOutOfRange(_)
        )
    }
}
