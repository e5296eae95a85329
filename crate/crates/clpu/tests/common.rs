#![allow(dead_code)]

use echoseg_clpu::{ClpuModel, EncoderConfig, ModelConfig};
use echoseg_nn::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Toy ladder at an arbitrary input size.
pub fn toy_config(size: usize) -> ModelConfig {
    let mut c = ModelConfig::toy();
    c.encoder = EncoderConfig {
        input_size: size,
        ..EncoderConfig::toy()
    };
    c
}

pub fn image<T: Element>(batch: usize, size: usize, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(&[batch, 1, size, size], |_| T::from_f64_lossy(r.random_range(0.0..1.0)))
}

/// Disc-shaped binary mask per batch item.
pub fn mask<T: Element>(batch: usize, size: usize, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(batch * size * size);
    for _ in 0..batch {
        let (cy, cx) = (r.random_range(0.0..size as f64), r.random_range(0.0..size as f64));
        let rad = size as f64 / 5.0;
        for y in 0..size {
            for x in 0..size {
                let inside = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= rad * rad;
                data.push(if inside { T::one() } else { T::zero() });
            }
        }
    }
    Tensor::new(&[batch, 1, size, size], data).unwrap()
}

/// Makes the posterior compute exactly what the prior computes by copying
/// every prior tensor over and zeroing the weights that read the mask channel.
pub fn tie_posterior_to_prior<T: Element>(model: &mut ClpuModel<T>) {
    let prior: Vec<(String, Tensor<T>)> = model
        .params
        .iter()
        .filter(|(_, n, _)| n.starts_with("prior."))
        .map(|(_, n, t)| (n.trim_start_matches("prior.").to_string(), t.clone()))
        .collect();
    for (suffix, t) in prior {
        let id = model.params.id(&format!("posterior.{suffix}")).unwrap();
        let dst = model.params.get_mut(id);
        if dst.shape() == t.shape() {
            *dst = t;
        } else {
            // First conv: [C, 2, 3, 3] ← [C, 1, 3, 3] with a zero mask slice.
            let s = dst.shape().to_vec();
            let k = s[2] * s[3];
            *dst = Tensor::from_fn(&s, |i| {
                let (o, rest) = (i / (2 * k), i % (2 * k));
                if rest < k {
                    t.data()[o * k + rest]
                } else {
                    T::zero()
                }
            });
        }
    }
}

/// Gives every bias a small random value. With all-zero biases, zero-padded
/// borders produce pre-activations of exactly 0, where ReLU has no derivative
/// and a central difference reads 1/2.
pub fn jitter_biases<T: Element>(model: &mut ClpuModel<T>, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|(_, n, _)| n.ends_with(".bias"))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v = T::from_f64_lossy(r.random_range(-0.1..0.1));
        }
    }
}
