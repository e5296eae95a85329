use echoseg_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ClpuError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = ClpuError> = std::result::Result<T, E>;
