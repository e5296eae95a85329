use echoseg_clpu::ClpuError;
use echoseg_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error("training diverged in fold {fold}, epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence {
        fold: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("missing checkpoint for fold(s) {0:?}")]
    MissingCheckpoint(Vec<usize>),
    #[error(transparent)]
    Core(#[from] echoseg_core::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Clpu(#[from] ClpuError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for problems with inputs or configuration (as opposed to I/O).
    pub fn is_validation(&self) -> bool {
        match self {
            HarnessError::Io(_) => false,
            HarnessError::Core(e) => e.is_validation(),
            HarnessError::Nn(NnError::Io(_)) => false,
            HarnessError::Clpu(ClpuError::Nn(NnError::Io(_))) => false,
            _ => true,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
