//! CLPU-Net and the probabilistic U-Net baseline.
//!
//! A prior encoder sees the ultrasound image, a posterior encoder sees the
//! image stacked with its ground-truth mask. A latent sample is tiled over the
//! last U-Net activation and a 1×1 head turns the result into mask logits.
//! The baseline ties prior and posterior with a KL penalty; CLPU-Net instead
//! pulls the prior's (μ, σ) onto the posterior's with an MSE and regularises
//! the posterior toward N(0, I).

mod config;
mod error;
mod latent;
mod loss;
mod model;

pub use config::{EncoderConfig, KlDirection, LossWeights, ModelConfig};
pub use error::{ClpuError, Result};
pub use latent::{kld_diag_gauss, latent_mse, sample_latent, LatentGaussian};
pub use loss::{threshold_mask, LossOutput, LossTerms, Segmentation};
pub use model::{latent_row, ClpuModel, LatentVars, ParamGroup};

use serde::{Deserialize, Serialize};

/// Which objective a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Clpu,
    ProbUnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Clpu => "clpu",
            ModelKind::ProbUnet => "prob_unet",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ClpuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clpu" => Ok(ModelKind::Clpu),
            "prob_unet" | "prob-unet" => Ok(ModelKind::ProbUnet),
            other => Err(ClpuError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}
