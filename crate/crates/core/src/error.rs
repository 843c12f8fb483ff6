//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a domain invariant (bad feature vector, reward out of
    /// `[0,1]`, probabilities that do not normalize, ...).
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Inputs are structurally fine but out of the supported range
    /// (enumeration caps, corruption factors pushing a probability past 1).
    #[error("out of range: {0}")]
    Range(String),

    /// A policy was applied outside its declared domain.
    #[error("policy domain error: {0}")]
    PolicyDomain(String),

    /// An operation needs data the log does not carry (propensity vectors,
    /// seeds).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A logged record contradicts the estimator's preconditions.
    #[error("data integrity: {0}")]
    DataIntegrity(String),

    /// Empty or otherwise unusable input to an operation.
    #[error("invalid input: {0}")]
    Input(String),

    /// Two artifacts that must describe the same period/partition do not.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A serialized log or report could not be parsed.
    #[error("parse error at line {line}: {why}")]
    Parse { line: usize, why: String },

    /// Unknown or unsupported serialization schema version.
    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}
