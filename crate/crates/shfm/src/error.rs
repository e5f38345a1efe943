use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum ShfmError {
    /// Invalid input data or configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimension mismatch between related structures.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numerical operation failed (factorization, singular matrix, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A degenerate case that has no meaningful answer (constant field, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, ShfmError>;
