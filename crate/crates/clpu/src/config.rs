use serde::{Deserialize, Serialize};

use crate::error::{ClpuError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub convs_per_block: usize,
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub input_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            blocks: 4,
            convs_per_block: 3,
            channels: vec![32, 64, 128, 192],
            latent_dim: 20,
            input_size: 128,
        }
    }
}

impl EncoderConfig {
    /// Reduced ladder used for tests and the synthetic experiment.
    pub fn toy() -> Self {
        EncoderConfig {
            channels: vec![8, 16, 24, 32],
            latent_dim: 6,
            input_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.convs_per_block == 0 || self.latent_dim == 0 {
            return Err(ClpuError::Config("blocks, convs_per_block and latent_dim must be positive".into()));
        }
        if self.channels.len() != self.blocks || self.channels.contains(&0) {
            return Err(ClpuError::Config(format!(
                "{} blocks need {} positive channel counts, got {:?}",
                self.blocks, self.blocks, self.channels
            )));
        }
        let stride = 1usize << self.blocks;
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(ClpuError::Config(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.blocks
            )));
        }
        Ok(())
    }
}

/// Which way round the posterior regulariser is taken in the CLPU loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(N(0, I) ‖ Q)`.
    #[default]
    StandardFirst,
    /// `KL(Q ‖ N(0, I))`, the usual VAE form.
    PosteriorFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub kl_direction: KlDirection,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1e-4,
            beta: 0.3,
            kl_direction: KlDirection::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(ClpuError::Config(format!(
                "need 0 <= alpha <= 1 and beta >= 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Channel ladder of the U-Net trunk, one entry per scale.
    pub unet_channels: Vec<usize>,
    /// Channels of the last trunk activation handed to the fusion head.
    pub feature_channels: usize,
    pub fusion_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        ModelConfig {
            unet_channels: encoder.channels.clone(),
            encoder,
            feature_channels: 32,
            fusion_channels: 32,
        }
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        let encoder = EncoderConfig::toy();
        ModelConfig {
            unet_channels: encoder.channels.clone(),
            encoder,
            feature_channels: 8,
            fusion_channels: 8,
        }
    }

    pub fn input_size(&self) -> usize {
        self.encoder.input_size
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let levels = self.unet_channels.len();
        if levels == 0 || self.unet_channels.contains(&0) {
            return Err(ClpuError::Config("unet_channels must be non-empty and positive".into()));
        }
        if self.encoder.input_size % (1usize << (levels - 1)) != 0 {
            return Err(ClpuError::Config(format!(
                "input size {} does not survive {} poolings",
                self.encoder.input_size,
                levels - 1
            )));
        }
        if self.feature_channels == 0 || self.fusion_channels == 0 {
            return Err(ClpuError::Config("feature and fusion channels must be positive".into()));
        }
        Ok(())
    }
}
