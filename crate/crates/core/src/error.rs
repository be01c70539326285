//! Crate-wide error type.

/// Errors surfaced by the library, grouped so callers can distinguish
/// contract violations, data problems, and numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs with inconsistent shapes or dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Invalid parameter or configuration value.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Cholesky factorization failed even at the maximum jitter level.
    #[error("{role} matrix is not positive definite (jitter escalated to {max_jitter:.3e})")]
    SingularMatrix { role: String, max_jitter: f64 },

    /// Malformed or inconsistent event data.
    #[error("data error: {0}")]
    Data(String),

    /// Optimization diverged or produced a non-finite objective/gradient.
    #[error("optimization failed: {0}")]
    Optimization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
