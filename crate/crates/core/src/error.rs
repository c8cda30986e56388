use thiserror::Error;

/// Errors raised by the estimation, inference and sampling routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value outside the model support: {0}")]
    Domain(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("normalizing series diverges for lambda = {lambda}, nu = {nu}")]
    DivergentSeries { lambda: f64, nu: f64 },

    #[error("rejection sampler acceptance rate {rate:e} after {proposals} proposals")]
    LowAcceptance { rate: f64, proposals: u64 },

    #[error("degenerate variance estimate: {0}")]
    DegenerateVariance(String),

    #[error("non-finite evaluation: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
