//! Synthetic dataset assembly, subject-grouped cross-validation, training
//! and evaluation for the segmentation models.

mod error;

pub mod dataset;
pub mod folds;
pub mod io;
pub mod metrics;
pub mod train;

pub use dataset::{build_synthetic_dataset, DatasetSpec, SampleMeta, SampleRecord};
pub use error::{HarnessError, Result};
pub use folds::{kfold_by_subject, FoldPlan};
pub use metrics::{comparison_table, compute_metrics, image_metrics, Metrics, MetricsReport};
pub use train::{evaluate, train, EvalConfig, Evaluation, LossRecord, Segmenter, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

/// Dataset, training and evaluation settings in one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Seed for training and evaluation draws; the dataset has its own.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.dataset.image_size != self.train.model.input_size() {
            return Err(HarnessError::Config(format!(
                "dataset image_size {} does not match model input_size {}",
                self.dataset.image_size,
                self.train.model.input_size()
            )));
        }
        if self.dataset.subjects < self.train.folds {
            return Err(HarnessError::Config(format!(
                "{} subjects cannot fill {} folds",
                self.dataset.subjects, self.train.folds
            )));
        }
        Ok(())
    }
}
