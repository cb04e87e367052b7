use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("image format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("image too small for scheme: {0}")]
    ImageTooSmall(String),
    #[error("no achievable threshold: target FPR {target:e} is below the minimum achievable {minimum:e}")]
    Unachievable { target: f64, minimum: f64 },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error("refinement produced a non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("generator exhausted after {attempts} attempts ({accepted} of {requested} accepted)")]
    Exhausted {
        attempts: usize,
        accepted: usize,
        requested: usize,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
