//! One CLPU-Net optimization step (forward + backward) per batch size, with
//! the convolution kernels run sequentially or across the batch in parallel.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use echoseg_clpu::{ClpuModel, LossWeights, ModelConfig};
use echoseg_nn::{Backend, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[n, 1, 32, 32], |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&[n, 1, 32, 32], |i| if (i % 32) / 8 == 1 { 1.0 } else { 0.0 });
    (x, y)
}

fn training_step(c: &mut Criterion) {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::toy(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let weights = LossWeights::default();
    let mut group = c.benchmark_group("clpu_step/batch_items");
    for n in [1, 4, 16] {
        let (x, y) = batch(n, n as u64);
        for backend in [Backend::Sequential, Backend::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{backend:?}"), n), &n, |b, _| {
                b.iter(|| {
                    let g = Graph::with_backend(backend);
                    let bound = model.params.bind(&g).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(7);
                    let out = model.loss_clpu(&g, &bound, black_box(&x), &y, &weights, &mut rng).unwrap();
                    g.backward(out.loss).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).warm_up_time(Duration::from_millis(500));
    targets = training_step
}
criterion_main!(benches);
