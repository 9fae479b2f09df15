use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A formula was evaluated outside its domain (singular or indefinite matrix).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// Zero detector efficiency: no information reaches the record, use C = Γ = 0.
    #[error("unmonitored limit: detector efficiency is zero, monitoring matrices vanish")]
    UnmonitoredLimit,

    #[error("integration failure at step {step}: {reason}")]
    IntegrationFailure { step: usize, reason: String },

    #[error("no steady state: {0}")]
    NoSteadyState(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::NumericDomain(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: msg.into(),
        }
    }
}
