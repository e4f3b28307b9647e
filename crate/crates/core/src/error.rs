use thiserror::Error;

/// Errors produced by the tracking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input contains non-finite values: {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("covariance of mixture component {index} is singular or not positive definite")]
    SingularComponent { index: usize },

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("measurement has no reference point; route it through the MAX or MH model")]
    MissingRefPoint,

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error(
        "association group with {pairs} feasible pairs exceeds the exhaustive budget of {budget}; \
         enable the K-best fallback (k_best) in the filter configuration"
    )]
    EnumerationBudget { pairs: usize, budget: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
