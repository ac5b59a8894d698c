//! Error handling for the core library.
//!
//! Every fallible public operation returns [`Result`]. Errors carry enough
//! context to act on (what was wrong, where, and — for recoverable situations
//! — what to do instead). Each variant maps to a coarse [`ErrorCategory`]
//! that front ends can translate into process exit codes.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of an [`Error`], used by front ends to pick exit
/// codes and by tests to assert on failure modes without string matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller supplied an invalid configuration or argument.
    Config,
    /// Input data is malformed or inconsistent (I/O problems included).
    Data,
    /// A numeric invariant failed (non-finite values, divergence).
    Numeric,
    /// Internal invariant violated; indicates a bug, not a user error.
    Internal,
}

/// Error type for all core operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination of options.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Operand shapes do not line up (matrix products, batch widths, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed or inconsistent input data.
    #[error("invalid data: {0}")]
    Data(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A computation produced or received a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Problem size exceeds a documented capacity limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// All pairwise distances are zero, so relative weights are undefined.
    /// Callers may substitute uniform weights where that is meaningful.
    #[error(
        "degenerate transport distances: {0}; every subject distribution is \
         identical, so relative weights are undefined — fall back to uniform \
         subject weights or supply more varied data"
    )]
    DegenerateDistances(String),

    /// Internal invariant violated. Always a bug in this crate.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// The coarse category this error belongs to.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::Shape(_)
            | Error::Capacity(_)
            | Error::DegenerateDistances(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Io { .. } => ErrorCategory::Data,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Internal(_) => ErrorCategory::Internal,
        }
    }
}

/// Returns an [`Error::Numeric`] if any value in `values` is NaN or infinite.
///
/// `context` names the quantity being checked so the message points at the
/// offending boundary (e.g. `"encoder forward output"`).
pub fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{context}: non-finite value {v} at index {i}"
            )));
        }
    }
    Ok(())
}
