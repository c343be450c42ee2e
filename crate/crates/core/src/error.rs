//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by signal generation, simulation, regression, design and
/// identification routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (dimensions, bounds, counts).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulation produced a non-finite value.
    #[error("simulation diverged at step {step}: {context}")]
    Divergence { step: usize, context: String },

    /// A Gram matrix could not be factorized even after jitter escalation.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    /// An object was used with inputs it was not built for.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An objective returned a non-finite value during differentiation.
    #[error("non-finite objective while perturbing coordinate {coordinate}")]
    Evaluation { coordinate: usize },

    /// A solver was called with an argument that violates its precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code associated with this error class.
    ///
    /// `2` configuration, `3` numerical failure, `4` I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) | Error::Contract(_) => 2,
            Error::Domain(_) | Error::Divergence { .. } | Error::Conditioning(_) | Error::Evaluation { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
            Error::Json(e) if e.is_io() => 4,
            Error::Json(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
