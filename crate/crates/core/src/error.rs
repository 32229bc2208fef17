//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit-code taxonomy: invalid input, validation
/// and unsupported configurations are caller errors; numerical and training
/// failures are runtime breakdowns of the estimation machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed malformed or non-finite data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structural constraint (dimensions, simplex, schedule) was violated.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A numerical operation failed or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested configuration is not supported.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Model training diverged.
    #[error("training failure: {0}")]
    Training(String),

    /// An error that occurred while processing a specific sequence step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches a 1-based sequence step to an error.
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping any step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
