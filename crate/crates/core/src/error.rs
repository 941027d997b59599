use thiserror::Error;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("operator numerically singular (condition estimate {cond:.3e} exceeds {limit:.3e})")]
    SingularOperator { cond: f64, limit: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("no convergence in {what}: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        what: String,
        residual: f64,
        iterations: usize,
    },

    #[error("relation does not contain the zero pair: {0}")]
    MissingZeroPair(String),

    #[error("minimal section appears unbounded: |A_lambda(x)| = {norm:.3e} at lambda = {lambda:.3e}")]
    UnboundedSection { norm: f64, lambda: f64 },

    #[error("boundary space basis degenerate: {0}")]
    DegenerateBasis(String),

    #[error("hypothesis check failed: {0}")]
    HypothesisFailed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
