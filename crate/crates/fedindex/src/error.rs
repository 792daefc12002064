//! Error type shared across the crate.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value handed to a constructor or configuration violates its contract.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An argument left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    /// A local update produced a non-finite gradient.
    #[error("non-finite gradient for producer {producer}")]
    NonFiniteGradient { producer: u64 },

    /// Training aborted: a round produced a non-finite quantity.
    #[error("diverged at round {round}: non-finite {quantity} for producer {producer}")]
    Diverged {
        round: u64,
        producer: u64,
        quantity: &'static str,
    },

    /// A non-finite value outside the per-round training loop.
    #[error("non-finite {0}")]
    NonFinite(String),

    /// Basis-risk selection `z > z0` matched no observation.
    #[error("no observations with index value above threshold {z0}")]
    EmptySelection { z0: f64 },

    #[error("population file, line {line}: {reason}")]
    PopulationFormat { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(reason: impl Into<String>) -> Self {
        Error::Domain(reason.into())
    }

    /// Attach the round number to a divergence raised inside a local update.
    pub(crate) fn at_round(self, round: u64) -> Self {
        match self {
            Error::NonFiniteGradient { producer } => Error::Diverged {
                round,
                producer,
                quantity: "gradient",
            },
            other => other,
        }
    }
}
