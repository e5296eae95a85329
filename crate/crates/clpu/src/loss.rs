use echoseg_nn::{Bound, Element, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{KlDirection, LossWeights};
use crate::error::{ClpuError, Result};
use crate::model::{ClpuModel, LatentVars};

/// Scalar components of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    /// Reconstruction plus weighted KL.
    pub vae: f64,
    /// Prior/posterior parameter MSE (zero for the probabilistic U-Net).
    pub mse: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub loss: Var,
    pub terms: LossTerms,
}

impl LossWeights {
    /// `α·L_VAE + (1 − α)·L_MSE`.
    pub fn combine(&self, vae: f64, mse: f64) -> f64 {
        self.alpha * vae + (1.0 - self.alpha) * mse
    }
}

struct Forward {
    prior: LatentVars,
    posterior: LatentVars,
    bce: Var,
}

fn scalar<T: Element>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item()
}

impl<T: Element> ClpuModel<T> {
    /// Shared training forward pass: both encoders, one posterior sample,
    /// and the reconstruction term.
    fn training_forward<R: Rng + ?Sized>(
        &self,
        g: &Graph<T>,
        b: &Bound,
        x_us: &Tensor<T>,
        x_seg: &Tensor<T>,
        rng: &mut R,
    ) -> Result<Forward> {
        self.check_image(x_us, 1, "training input")?;
        self.check_image(x_seg, 1, "training target")?;
        if x_us.shape()[0] != x_seg.shape()[0] {
            return Err(ClpuError::Input(format!(
                "image batch {:?} vs mask batch {:?}",
                x_us.shape(),
                x_seg.shape()
            )));
        }
        let xu = g.constant(x_us.clone())?;
        let xs = g.constant(x_seg.clone())?;
        let prior = self.encode_prior(g, b, xu)?;
        let posterior = self.encode_posterior(g, b, xu, xs)?;
        let z = self.sample_latent(g, posterior, rng)?;
        let features = self.unet_forward(g, b, xu)?;
        let logits = self.fuse_and_predict(g, b, features, z)?;
        let bce = g.bce_with_logits(logits, x_seg)?;
        Ok(Forward { prior, posterior, bce })
    }

    /// Baseline objective: `BCE + β·KL(Q ‖ P)`.
    pub fn loss_probabilistic_unet<R: Rng + ?Sized>(
        &self,
        g: &Graph<T>,
        b: &Bound,
        x_us: &Tensor<T>,
        x_seg: &Tensor<T>,
        beta: f64,
        rng: &mut R,
    ) -> Result<LossOutput> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(ClpuError::Config(format!("beta must be non-negative, got {beta}")));
        }
        let f = self.training_forward(g, b, x_us, x_seg, rng)?;
        let kl = g.kl_diag_gauss(f.posterior.mu, f.posterior.sigma, f.prior.mu, f.prior.sigma)?;
        let weighted = g.scale(kl, beta)?;
        let loss = g.add(f.bce, weighted)?;
        let (reconstruction, kl) = (scalar(g, f.bce), scalar(g, kl));
        let total = scalar(g, loss);
        Ok(LossOutput {
            loss,
            terms: LossTerms {
                total,
                reconstruction,
                kl,
                vae: total,
                mse: 0.0,
            },
        })
    }

    /// Collaborative objective: `α·(BCE + β·KL_std) + (1 − α)·MSE(prior, posterior)`.
    pub fn loss_clpu<R: Rng + ?Sized>(
        &self,
        g: &Graph<T>,
        b: &Bound,
        x_us: &Tensor<T>,
        x_seg: &Tensor<T>,
        weights: &LossWeights,
        rng: &mut R,
    ) -> Result<LossOutput> {
        weights.validate()?;
        let f = self.training_forward(g, b, x_us, x_seg, rng)?;
        let shape = g.shape(f.posterior.mu);
        let zeros = g.constant(Tensor::zeros(&shape))?;
        let ones = g.constant(Tensor::full(&shape, T::one()))?;
        let (pm, ps) = (f.posterior.mu, f.posterior.sigma);
        let kl = match weights.kl_direction {
            KlDirection::StandardFirst => g.kl_diag_gauss(zeros, ones, pm, ps)?,
            KlDirection::PosteriorFirst => g.kl_diag_gauss(pm, ps, zeros, ones)?,
        };
        let weighted_kl = g.scale(kl, weights.beta)?;
        let vae = g.add(f.bce, weighted_kl)?;
        let mse = g.latent_mse(f.prior.mu, f.prior.sigma, pm, ps)?;
        let a = g.scale(vae, weights.alpha)?;
        let m = g.scale(mse, 1.0 - weights.alpha)?;
        let loss = g.add(a, m)?;
        Ok(LossOutput {
            loss,
            terms: LossTerms {
                total: scalar(g, loss),
                reconstruction: scalar(g, f.bce),
                kl: scalar(g, kl),
                vae: scalar(g, vae),
                mse: scalar(g, mse),
            },
        })
    }

    /// Inference path: prior sample, fused prediction, sigmoid. Returns the
    /// probability map `[B, 1, S, S]`.
    pub fn predict_probabilities<R: Rng + ?Sized>(&self, g: &Graph<T>, x_us: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        self.check_image(x_us, 1, "infer_segmentation")?;
        let b = self.params.bind_frozen(g)?;
        let x = g.constant(x_us.clone())?;
        let prior = self.encode_prior(g, &b, x)?;
        let z = self.sample_latent(g, prior, rng)?;
        let features = self.unet_forward(g, &b, x)?;
        let logits = self.fuse_and_predict(g, &b, features, z)?;
        let p = g.sigmoid(logits)?;
        let out = g.value(p).clone();
        Ok(out)
    }

    /// Binary masks `[p ≥ threshold]` together with the probabilities.
    pub fn infer_segmentation<R: Rng + ?Sized>(
        &self,
        g: &Graph<T>,
        x_us: &Tensor<T>,
        rng: &mut R,
        threshold: f64,
    ) -> Result<Segmentation<T>> {
        let probabilities = self.predict_probabilities(g, x_us, rng)?;
        let masks = threshold_mask(&probabilities, threshold);
        Ok(Segmentation { probabilities, masks })
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation<T> {
    pub probabilities: Tensor<T>,
    /// 0/1 per pixel, same layout as `probabilities`.
    pub masks: Vec<u8>,
}

pub fn threshold_mask<T: Element>(probabilities: &Tensor<T>, threshold: f64) -> Vec<u8> {
    probabilities
        .data()
        .iter()
        .map(|p| u8::from(p.as_f64() >= threshold))
        .collect()
}
