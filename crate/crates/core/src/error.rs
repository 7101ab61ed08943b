use thiserror::Error;

/// Errors surfaced by the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or configuration mismatch detected while building or running a program.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data (topology, config file) violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// Caller misuse: wrong frame counts, empty datasets, non-scalar losses.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// A numeric routine was asked to operate outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
