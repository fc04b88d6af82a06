use thiserror::Error;

/// Errors raised by the atlas engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate similarity: {0}")]
    DegenerateSimilarity(String),

    #[error("degenerate weights at voxel {voxel}: weight sum {sum:e} <= {eps:e}")]
    DegenerateWeights { voxel: usize, sum: f64, eps: f64 },

    #[error("degenerate intensity: {0}")]
    DegenerateIntensity(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("map not invertible: residual {residual:e} exceeds threshold {threshold:e}")]
    NonInvertible { residual: f64, threshold: f64 },

    #[error("config infeasible: {0}")]
    Infeasible(String),

    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
