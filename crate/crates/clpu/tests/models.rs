mod common;

use common::{image, jitter_biases, mask, rng, tie_posterior_to_prior, toy_config};
use echoseg_clpu::{latent_row, ClpuError, ClpuModel, ModelConfig, ParamGroup};
use echoseg_nn::gradcheck::gradcheck;
use echoseg_nn::{Bound, Graph, NnError, Tensor};

#[test]
fn zero_input_gives_zero_mean_and_ln2_sigma() {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::default(), &mut rng(1)).unwrap();
    let g = Graph::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(Tensor::zeros(&[1, 1, 128, 128])).unwrap();
    let prior = model.encode_prior(&g, &b, x).unwrap();
    let d = latent_row(&g, prior, 0).unwrap();
    assert_eq!(d.dim(), 20);
    assert_eq!(g.shape(prior.mu), vec![1, 20]);
    assert!(d.mu.iter().all(|&m| m == 0.0));
    assert!(d.sigma.iter().all(|&s| (s - std::f64::consts::LN_2).abs() < 1e-6));

    let seg = g.constant(Tensor::zeros(&[1, 1, 128, 128])).unwrap();
    let post = model.encode_posterior(&g, &b, x, seg).unwrap();
    let d = latent_row(&g, post, 0).unwrap();
    assert_eq!(d.dim(), 20);
    assert!(d.mu.iter().all(|&m| m == 0.0));
    assert!(d.sigma.iter().all(|&s| (s - std::f64::consts::LN_2).abs() < 1e-6));
}

#[test]
fn sigma_is_positive_for_arbitrary_input() {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::toy(), &mut rng(2)).unwrap();
    let g = Graph::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(Tensor::from_fn(&[3, 1, 32, 32], |i| ((i * 37) % 101) as f32 * 50.0 - 2000.0)).unwrap();
    let seg = g.constant(mask(3, 32, 4)).unwrap();
    for lat in [model.encode_prior(&g, &b, x).unwrap(), model.encode_posterior(&g, &b, x, seg).unwrap()] {
        assert_eq!(g.shape(lat.sigma), vec![3, 6]);
        assert!(g.value(lat.sigma).data().iter().all(|&s| s > 0.0));
    }
}

#[test]
fn wrong_input_size_is_a_shape_error() {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::toy(), &mut rng(3)).unwrap();
    let g = Graph::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(Tensor::zeros(&[1, 1, 30, 32])).unwrap();
    assert!(matches!(model.encode_prior(&g, &b, x), Err(ClpuError::Nn(NnError::Shape { .. }))));
    assert!(matches!(model.unet_forward(&g, &b, x), Err(ClpuError::Nn(NnError::Shape { .. }))));
    let two = g.constant(Tensor::zeros(&[1, 2, 32, 32])).unwrap();
    assert!(model.encode_prior(&g, &b, two).is_err());
}

#[test]
fn unet_keeps_spatial_dims_and_maps_zero_to_zero() {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::toy(), &mut rng(5)).unwrap();
    let g = Graph::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(image(2, 32, 6)).unwrap();
    let f = model.unet_forward(&g, &b, x).unwrap();
    assert_eq!(g.shape(f), vec![2, 8, 32, 32]);
    let z = g.constant(Tensor::zeros(&[1, 1, 32, 32])).unwrap();
    let f0 = model.unet_forward(&g, &b, z).unwrap();
    assert!(g.value(f0).data().iter().all(|&v| v == 0.0));
}

#[test]
fn unet_trunk_gradients_match_finite_differences() {
    let config = toy_config(16);
    for seed in 0..3 {
        let mut model: ClpuModel<f64> = ClpuModel::new(config.clone(), &mut rng(seed)).unwrap();
        jitter_biases(&mut model, 50 + seed);
        let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, _, t)| t.clone()).collect();
        let unet = model.group(ParamGroup::Unet);
        let x: Tensor<f64> = image(2, 16, 100 + seed);
        let wts: Tensor<f64> = image(2, 16, 200 + seed);
        let wts = Tensor::from_fn(&[2, 8, 16, 16], |i| wts.data()[i % wts.numel()] - 0.5);
        let report = gradcheck(
            &inputs,
            |g, vars| {
                let b = Bound::from_vars(vars.to_vec());
                let xv = g.constant(x.clone())?;
                let f = model.unet_forward(g, &b, xv)?;
                let w = g.constant(wts.clone())?;
                let p = g.mul(f, w)?;
                Ok::<_, ClpuError>(g.sum_all(p)?)
            },
            1e-6,
            3,
            &mut rng(seed),
        )
        .unwrap();
        assert!(report.relative_error < 1e-3, "seed {seed}: {report:?}");
        assert!(!unet.is_empty());
    }
}

#[test]
fn latent_injection_is_live() {
    let model: ClpuModel<f32> = ClpuModel::new(ModelConfig::toy(), &mut rng(7)).unwrap();
    let g = Graph::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(image(1, 32, 8)).unwrap();
    let f = model.unet_forward(&g, &b, x).unwrap();
    let z1 = g.constant(Tensor::from_fn(&[1, 6], |i| i as f32 * 0.3 - 0.7)).unwrap();
    let z2 = g.constant(Tensor::from_fn(&[1, 6], |i| 1.0 - i as f32 * 0.2)).unwrap();
    let l1 = model.fuse_and_predict(&g, &b, f, z1).unwrap();
    let l2 = model.fuse_and_predict(&g, &b, f, z2).unwrap();
    assert_eq!(g.shape(l1), vec![1, 1, 32, 32]);
    assert_ne!(g.value(l1).data(), g.value(l2).data());

    // z = 0 equals running the fusion stack by hand on F with zero channels.
    let zero = g.constant(Tensor::zeros(&[1, 6])).unwrap();
    let lz = model.fuse_and_predict(&g, &b, f, zero).unwrap();
    let blank = g.constant(Tensor::zeros(&[1, 6, 32, 32])).unwrap();
    let mut h = g.concat_channels(f, blank).unwrap();
    let p = |name: &str| b.var(model.params.id(name).unwrap());
    for i in 0..3 {
        h = g.conv2d(h, p(&format!("fusion.conv{i}.weight")), Some(p(&format!("fusion.conv{i}.bias"))), 1, 0).unwrap();
        h = g.relu(h).unwrap();
    }
    let manual = g.conv2d(h, p("fusion.logits.weight"), Some(p("fusion.logits.bias")), 1, 0).unwrap();
    assert_eq!(g.value(lz).data(), g.value(manual).data());

    let wrong = g.constant(Tensor::zeros(&[1, 5])).unwrap();
    assert!(model.fuse_and_predict(&g, &b, f, wrong).is_err());
}

#[test]
fn graph_sampling_is_reparameterised() {
    let model: ClpuModel<f64> = ClpuModel::new(ModelConfig::toy(), &mut rng(9)).unwrap();
    let g = Graph::<f64>::new();
    let mu = g.param(Tensor::from_fn(&[1, 6], |i| i as f64)).unwrap();
    let sigma = g.param(Tensor::full(&[1, 6], 1e-12)).unwrap();
    let lat = echoseg_clpu::LatentVars { mu, sigma };
    let z = model.sample_latent(&g, lat, &mut rng(1)).unwrap();
    for (a, b) in g.value(z).data().iter().zip(g.value(mu).data()) {
        assert!((a - b).abs() < 1e-10);
    }
    let s = g.sum_all(z).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(mu).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(grads.get(sigma).is_some());
}

#[test]
fn tied_posterior_matches_prior() {
    let mut model: ClpuModel<f64> = ClpuModel::new(toy_config(16), &mut rng(10)).unwrap();
    tie_posterior_to_prior(&mut model);
    let g = Graph::<f64>::new();
    let b = model.params.bind(&g).unwrap();
    let x = g.constant(image(2, 16, 11)).unwrap();
    let s = g.constant(mask(2, 16, 12)).unwrap();
    let p = model.encode_prior(&g, &b, x).unwrap();
    let q = model.encode_posterior(&g, &b, x, s).unwrap();
    assert_eq!(g.value(p.mu).data(), g.value(q.mu).data());
    assert_eq!(g.value(p.sigma).data(), g.value(q.sigma).data());
}
