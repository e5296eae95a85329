use std::path::PathBuf;

use echoseg_harness::HarnessError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid JSON in {}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Core(#[from] echoseg_core::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn is_validation(&self) -> bool {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => true,
            CliError::Read { .. } | CliError::Write { .. } => false,
            CliError::Core(e) => e.is_validation(),
            CliError::Harness(e) => e.is_validation(),
        }
    }

    /// 2 for validation problems, 1 for I/O failures.
    pub fn exit_code(&self) -> u8 {
        if self.is_validation() {
            2
        } else {
            1
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.to_string(),
            "kind": if self.is_validation() { "validation" } else { "io" },
            "exit_code": self.exit_code(),
        });
        if let CliError::Harness(HarnessError::MissingCheckpoint(folds)) = self {
            v["missing_folds"] = serde_json::json!(folds);
        }
        v
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
