use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ClpuError, Result};

/// Diagonal Gaussian over the latent space. `sigma` holds standard
/// deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = LatentGaussian { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn standard(dim: usize) -> Self {
        LatentGaussian {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(ClpuError::Input(format!(
                "mu has {} entries but sigma has {}",
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || self.mu.iter().any(|m| !m.is_finite()) {
            return Err(ClpuError::Input("sigma must be finite and strictly positive".into()));
        }
        Ok(())
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), x)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * ln_2pi)
            .sum()
    }
}

fn same_dim(a: &LatentGaussian, b: &LatentGaussian) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(ClpuError::Input(format!("latent dims differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Closed-form `KL(q ‖ p)` summed over dimensions.
pub fn kld_diag_gauss(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    same_dim(q, p)?;
    Ok(q.mu
        .iter()
        .zip(&q.sigma)
        .zip(p.mu.iter().zip(&p.sigma))
        .map(|((mq, sq), (mp, sp))| (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5)
        .sum())
}

/// `(1/N) Σ (μa − μb)² + (1/N) Σ (σa − σb)²`.
pub fn latent_mse(a: &LatentGaussian, b: &LatentGaussian) -> Result<f64> {
    same_dim(a, b)?;
    let n = a.dim().max(1) as f64;
    let dm: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum();
    let ds: f64 = a.sigma.iter().zip(&b.sigma).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(dm / n + ds / n)
}

/// Reparameterised draw `z = μ + σ ⊙ ε` with `ε ~ N(0, I)`.
pub fn sample_latent<R: Rng + ?Sized>(dist: &LatentGaussian, rng: &mut R) -> Vec<f64> {
    dist.mu
        .iter()
        .zip(&dist.sigma)
        .map(|(m, s)| {
            let e: f64 = rng.sample(StandardNormal);
            m + s * e
        })
        .collect()
}
