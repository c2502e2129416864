use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e}, tolerance {tolerance:e})")]
    NotPositiveDefinite { min_eig: f64, tolerance: f64 },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix exponential overflows: eigenvalue {0} exceeds cap")]
    Overflow(f64),

    #[error("direction does not have unit Frobenius norm (norm {0})")]
    NotUnitNorm(f64),

    #[error("direction has repeated eigenvalues (gap {0:e})")]
    DegenerateDirection(f64),

    #[error("sampled matrix is degenerate after resampling")]
    DegenerateSample,

    #[error("empirical measure is empty")]
    EmptyMeasure,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance of size {rows}x{cols} exceeds the exact solver cap of {cap} entries")]
    InstanceTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("Sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("features were built from different projection bases or quantile grids")]
    BasisMismatch,

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("linear system is ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("projection basis lacks eigen factors required by this estimator")]
    BasisKind,

    #[error("labels are required but missing")]
    MissingLabels,

    #[error("all feature columns are constant")]
    SingularFeatures,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidData(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
