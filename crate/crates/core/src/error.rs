use thiserror::Error;

/// Errors raised across the FCAR pipeline.
#[derive(Debug, Error)]
pub enum FcarError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: need at least {needed} curves, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no valid dependence interval: {0}")]
    NoValidInterval(String),

    #[error("outside fit domain: {0}")]
    FitDomain(String),

    #[error("precision matrix is singular or indefinite at dependence {value}")]
    SingularPrecision { value: f64 },

    #[error("degenerate component {index}: eigenvalue {value} is not positive")]
    DegenerateComponent { index: usize, value: f64 },

    #[error("numeric failure at dependence {value}: {message}")]
    Numeric { value: f64, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid fit: {0}")]
    InvalidFit(String),

    #[error("zero variance input")]
    ZeroVariance,

    #[error("no successful replicates in cell {0}")]
    EmptyCell(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FcarError {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            FcarError::DegenerateOperator(_)
                | FcarError::SingularPrecision { .. }
                | FcarError::DegenerateComponent { .. }
                | FcarError::Numeric { .. }
                | FcarError::InvalidFit(_)
                | FcarError::ZeroVariance
                | FcarError::EmptyCell(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FcarError>;
