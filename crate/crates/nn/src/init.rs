use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::element::Element;
use crate::tensor::Tensor;

/// He/Kaiming uniform initialisation for ReLU layers: `U(−b, b)` with
/// `b = √(6 / fan_in)`. `fan_in` is the product of all but the leading dim.
pub fn kaiming_uniform<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

/// Uniform in `±scale / √fan_in`, used for layers feeding a sigmoid or a
/// Gaussian head where the ReLU gain would be too large.
pub fn scaled_uniform<T: Element, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let bound = scale / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}
