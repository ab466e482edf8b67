use std::path::PathBuf;

/// Error type shared by every module in this crate.
///
/// Variants are grouped by failure class rather than by module so callers can
/// match on what went wrong (bad input vs. bad file vs. numeric blow-up)
/// without caring where it happened.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two inputs have incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// File access or decode/encode failure, with the offending path.
    #[error("i/o failure on {path}: {reason}")]
    Io { path: PathBuf, reason: String },

    /// A parsed artifact (CSV, JSON, checkpoint) is structurally invalid.
    #[error("malformed artifact {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    /// Training produced a non-finite or runaway loss and was aborted.
    #[error("divergence at outer iteration {iteration} during {stage}: loss {loss}")]
    Divergence {
        iteration: usize,
        stage: String,
        loss: f64,
    },

    /// A matrix that must be positive definite (or full rank) is not.
    #[error("conditioning failure: {context} (lambda_min = {lambda_min:.3e})")]
    Conditioning { context: String, lambda_min: f64 },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CoreError::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CoreError::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
