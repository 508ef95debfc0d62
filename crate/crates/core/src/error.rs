//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model construction, training and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Feature id outside the embedding table of its field.
    #[error("lookup error: feature {feature} out of range for field {field} (vocab {vocab})")]
    Lookup {
        /// Field index.
        field: usize,
        /// Offending feature id.
        feature: u32,
        /// Vocabulary size of the field.
        vocab: u32,
    },

    /// Unparsable model code, preset name or config value.
    #[error("parse error: {0}")]
    Parse(String),

    /// Inconsistent model or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Metric undefined for the given inputs (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Dataset-level failure (empty set, malformed rows, bad schema).
    #[error("data error: {0}")]
    Data(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
