use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scene error: {0}")]
    Scene(String),
    #[error("filter error: {0}")]
    Filter(String),
    #[error("block detection failed in interval {interval}: {reason}")]
    BlockDetection { interval: usize, reason: String },
    #[error("reference error: {0}")]
    Reference(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input-validation failures, as opposed to I/O problems.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
