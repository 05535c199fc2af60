use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum MfaError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A serialized tree could not be decoded.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A per-scale law is not a probability distribution at some scale.
    #[error("invalid distribution at scale {scale}: {message}")]
    Distribution { scale: u32, message: String },

    /// An estimator did not have enough data to produce a value.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A guarded precondition does not hold; the operation refuses to run.
    #[error("refused: {0}")]
    Refusal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MfaError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(MfaError::Domain(msg.into()))
}
