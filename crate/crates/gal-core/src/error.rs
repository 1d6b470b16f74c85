//! Shared error type for the engine.

/// Errors produced by the numerical kernel, the data world, and the runners.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two vectors (or a vector and a model) disagree on length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A computation produced or consumed a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Batch or feature shape does not match the model configuration.
    #[error("shape error: {0}")]
    Shape(String),
    /// A caller violated an API contract (e.g. wrong sample origin).
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
