use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical routines and the report writers.
#[derive(Debug, Error)]
pub enum HannerError {
    /// An argument lies outside the mathematical domain of the routine.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative evaluation did not reach the requested tolerance.
    #[error("accuracy error: {what} did not reach tolerance {tol:e} (best estimate {best}, error estimate {err:e})")]
    Accuracy {
        what: &'static str,
        best: f64,
        err: f64,
        tol: f64,
    },

    /// A computation would exceed its configured work budget.
    #[error("resource error: {0}")]
    Resource(String),

    /// A caller violated a precondition of the API.
    #[error("contract error: {0}")]
    Contract(String),

    /// Evaluation at a point where the function is singular.
    #[error("singularity: {0}")]
    Singularity(String),

    /// A numerical kernel (root finder, eigen solver) failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, HannerError>;

pub(crate) fn domain(msg: impl Into<String>) -> HannerError {
    HannerError::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> HannerError {
    HannerError::Contract(msg.into())
}
