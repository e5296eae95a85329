use echoseg_nn::gradcheck::gradcheck;
use echoseg_nn::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.3..1.5))
}

/// Reduces an arbitrary output to a scalar through a fixed random weighting
/// so that every output element carries a distinct upstream gradient.
fn weighted_sum(g: &Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = g.shape(y);
    let w = g.constant(random(&shape, &mut rng))?;
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

fn check(inputs: Vec<Tensor<f64>>, seed: u64, build: impl Fn(&Graph<f64>, &[Var]) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = gradcheck(&inputs, build, EPS, 40, &mut rng).unwrap();
    assert!(report.coordinates > 0);
    assert!(
        report.relative_error < TOL,
        "relative error {} (max abs {})",
        report.relative_error,
        report.max_abs_error
    );
}

#[test]
fn conv2d_matches_finite_differences() {
    let cases: [(&[usize], &[usize], usize, usize); 4] = [
        (&[1, 1, 5, 5], &[2, 1, 3, 3], 1, 1),
        (&[2, 3, 6, 4], &[4, 3, 3, 3], 1, 1),
        (&[2, 2, 7, 7], &[3, 2, 3, 3], 2, 0),
        (&[3, 4, 4, 4], &[2, 4, 1, 1], 1, 0),
    ];
    for (seed, (xs, ws, stride, pad)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let inputs = vec![random(xs, &mut rng), random(ws, &mut rng), random(&[ws[0]], &mut rng)];
        check(inputs, seed as u64, move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            weighted_sum(g, y, seed as u64)
        });
    }
}

#[test]
fn pointwise_ops_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [2, 3, 4, 2 + seed as usize];
        // Keep relu inputs away from the kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y, seed)
        });
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.sigmoid(v[0])?;
            weighted_sum(g, y, seed)
        });
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.softplus(v[0])?;
            let y = g.scale(y, -1.7)?;
            weighted_sum(g, y, seed)
        });
        let other = random(&shape, &mut rng);
        check(vec![x.clone(), other], seed, move |g, v| {
            let s = g.add(v[0], v[1])?;
            let y = g.mul(s, v[0])?;
            weighted_sum(g, y, seed)
        });
        check(vec![x], seed, |g, v| g.mean_all(v[0]));
    }
}

#[test]
fn spatial_ops_match_finite_differences() {
    let shapes: [[usize; 4]; 3] = [[1, 1, 4, 4], [2, 3, 6, 2], [1, 2, 8, 6]];
    for (seed, shape) in shapes.into_iter().enumerate() {
        let seed = seed as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&shape, &mut rng);
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.avg_pool2d(v[0], 2)?;
            weighted_sum(g, y, seed)
        });
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.bilinear_upsample2x(v[0])?;
            weighted_sum(g, y, seed)
        });
        check(vec![x.clone()], seed, move |g, v| {
            let y = g.global_avg_pool(v[0])?;
            weighted_sum(g, y, seed)
        });
        let mut s2 = shape;
        s2[1] = 2;
        let y2 = random(&s2, &mut rng);
        check(vec![x, y2], seed, move |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            weighted_sum(g, y, seed)
        });
    }
}

#[test]
fn dense_ops_match_finite_differences() {
    for (seed, (b, i, o)) in [(1usize, 3usize, 2usize), (4, 5, 6), (2, 8, 3)].into_iter().enumerate() {
        let seed = seed as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&[b, i], &mut rng), random(&[o, i], &mut rng), random(&[o], &mut rng)];
        check(inputs, seed, move |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let a = g.slice_cols(y, 1, o - 1)?;
            let t = g.tile_latent(a, 2, 3)?;
            weighted_sum(g, t, seed)
        });
    }
}

#[test]
fn losses_match_finite_differences() {
    for (seed, (b, n)) in [(1usize, 3usize), (4, 6), (2, 20)].into_iter().enumerate() {
        let seed = seed as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            random(&[b, n], &mut rng),
            positive(&[b, n], &mut rng),
            random(&[b, n], &mut rng),
            positive(&[b, n], &mut rng),
        ];
        check(inputs.clone(), seed, |g, v| g.kl_diag_gauss(v[0], v[1], v[2], v[3]));
        check(inputs, seed, |g, v| g.latent_mse(v[0], v[1], v[2], v[3]));

        let logits = Tensor::from_fn(&[b, 1, 3, n], |_| rng.random_range(-4.0..4.0));
        let target = Tensor::from_fn(&[b, 1, 3, n], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        check(vec![logits], seed, move |g, v| g.bce_with_logits(v[0], &target));
    }
}
