use thiserror::Error;

/// Errors raised by the estimators and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("record source is empty")]
    EmptySource,

    /// Every kernel weight vanished, so there is nothing to localise on.
    #[error("empty effective sample: all kernel weights are zero around x = {x}")]
    EmptyEffectiveSample { x: f64 },

    #[error("record {index}: expected dimension {expected}, found {found}")]
    MixedDimensions {
        index: u64,
        expected: usize,
        found: usize,
    },

    #[error(
        "Gamma is singular (smallest eigenvalue {min_eigenvalue:e}); \
         the conditional law may be concentrated on a line (assumption A1)"
    )]
    SingularGamma { min_eigenvalue: f64 },

    #[error("too many degenerate Monte Carlo samples: {skipped} of {total} had Y = m")]
    DegenerateSamples { skipped: usize, total: usize },

    /// A schedule does not satisfy the conditions an operation requires.
    #[error("refused: schedule violates {}", .violated.join(", "))]
    Refused { violated: Vec<String> },

    #[error("record source failed: {0}")]
    Source(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
