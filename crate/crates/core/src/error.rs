//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input is structurally valid but degenerate (e.g. an all-zero matrix).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A policy emitted stage parameters that violate the protocol contract.
    #[error("contract violation in {mapping}: {detail}")]
    ContractViolation { mapping: String, detail: String },

    /// A primitive produced a non-finite value, or gradients went non-finite.
    #[error("numeric fault in {context}")]
    NumericFault { context: String },

    /// Config file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Config fields are individually valid but mutually inconsistent.
    #[error("validation error: {0}")]
    Validation(String),

    /// Serialized data fails an integrity check (shape/length mismatch).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Checkpoint or corpus schema version is not supported.
    #[error("unsupported schema version: found {found}, expected {expected}")]
    UnsupportedVersion { found: String, expected: String },

    /// Checkpoint policy kind does not match the requested policy.
    #[error("policy kind mismatch: checkpoint holds {found}, expected {expected}")]
    KindMismatch { found: String, expected: String },

    /// An exhaustive search would exceed its evaluation budget.
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
