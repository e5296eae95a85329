use echoseg_nn::init::{kaiming_uniform, scaled_uniform};
use echoseg_nn::{Bound, Element, Graph, NnError, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::latent::LatentGaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Prior,
    Posterior,
    Unet,
    Fusion,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Prior, ParamGroup::Posterior, ParamGroup::Unet, ParamGroup::Fusion];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Prior => "prior.",
            ParamGroup::Posterior => "posterior.",
            ParamGroup::Unet => "unet.",
            ParamGroup::Fusion => "fusion.",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Encoder {
    in_channels: usize,
    convs: Vec<Conv>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Debug, Clone)]
struct Unet {
    down: Vec<[Conv; 2]>,
    up: Vec<[Conv; 2]>,
}

#[derive(Debug, Clone)]
struct Fusion {
    hidden: Vec<Conv>,
    out: Conv,
}

/// Graph handles for a Gaussian produced by an encoder, both `[B, N]`.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub sigma: Var,
}

/// Prior and posterior encoders, U-Net trunk and fusion head, with all
/// parameters in one store.
#[derive(Debug, Clone)]
pub struct ClpuModel<T: Element = f32> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    prior: Encoder,
    posterior: Encoder,
    unet: Unet,
    fusion: Fusion,
}

struct Builder<'a, T: Element, R: Rng + ?Sized> {
    store: ParamStore<T>,
    rng: &'a mut R,
}

impl<T: Element, R: Rng + ?Sized> Builder<'_, T, R> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Result<Conv> {
        let w = self.store.add(format!("{name}.weight"), kaiming_uniform(&[out_c, in_c, k, k], self.rng))?;
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(&[out_c]))?;
        Ok(Conv { w, b })
    }

    fn head_conv(&mut self, name: &str, out_c: usize, in_c: usize) -> Result<Conv> {
        let w = self.store.add(format!("{name}.weight"), scaled_uniform(&[out_c, in_c, 1, 1], 1.0, self.rng))?;
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(&[out_c]))?;
        Ok(Conv { w, b })
    }

    fn encoder(&mut self, prefix: &str, in_channels: usize, config: &ModelConfig) -> Result<Encoder> {
        let enc = &config.encoder;
        let mut convs = Vec::new();
        let mut c_in = in_channels;
        for (blk, &c) in enc.channels.iter().enumerate() {
            for j in 0..enc.convs_per_block {
                convs.push(self.conv(&format!("{prefix}block{blk}.conv{j}"), c, c_in, 3)?);
                c_in = c;
            }
        }
        let n = enc.latent_dim;
        let head_w = self
            .store
            .add(format!("{prefix}head.weight"), scaled_uniform(&[2 * n, c_in], 1.0, self.rng))?;
        let head_b = self.store.add(format!("{prefix}head.bias"), Tensor::zeros(&[2 * n]))?;
        Ok(Encoder {
            in_channels,
            convs,
            head_w,
            head_b,
        })
    }
}

fn shape_error(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

impl<T: Element> ClpuModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let prior = b.encoder("prior.", 1, &config)?;
        let posterior = b.encoder("posterior.", 2, &config)?;

        let ch = &config.unet_channels;
        let mut down = Vec::new();
        let mut c_in = 1;
        for (l, &c) in ch.iter().enumerate() {
            down.push([
                b.conv(&format!("unet.down{l}.conv0"), c, c_in, 3)?,
                b.conv(&format!("unet.down{l}.conv1"), c, c, 3)?,
            ]);
            c_in = c;
        }
        let mut up = Vec::new();
        for l in (0..ch.len() - 1).rev() {
            let out = if l == 0 { config.feature_channels } else { ch[l] };
            up.push([
                b.conv(&format!("unet.up{l}.conv0"), ch[l], ch[l + 1] + ch[l], 3)?,
                b.conv(&format!("unet.up{l}.conv1"), out, ch[l], 3)?,
            ]);
        }
        if ch.len() == 1 && config.feature_channels != ch[0] {
            up.push([
                b.conv("unet.up0.conv0", ch[0], ch[0], 3)?,
                b.conv("unet.up0.conv1", config.feature_channels, ch[0], 3)?,
            ]);
        }

        let fc = config.fusion_channels;
        let mut hidden = Vec::new();
        let mut c_in = config.feature_channels + config.latent_dim();
        for i in 0..3 {
            hidden.push(b.conv(&format!("fusion.conv{i}"), fc, c_in, 1)?);
            c_in = fc;
        }
        let out = b.head_conv("fusion.logits", 1, fc)?;

        Ok(ClpuModel {
            config,
            params: b.store,
            prior,
            posterior,
            unet: Unet { down, up },
            fusion: Fusion { hidden, out },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Ids of every parameter belonging to `group`.
    pub fn group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with(group.prefix()))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Converts parameters to another element type (e.g. f64 for gradient
    /// checks), keeping names and layout.
    pub fn cast<U: Element>(&self) -> ClpuModel<U> {
        let mut params = ParamStore::new();
        for (_, name, t) in self.params.iter() {
            params.add(name, t.cast()).expect("names are unique");
        }
        ClpuModel {
            config: self.config.clone(),
            params,
            prior: self.prior.clone(),
            posterior: self.posterior.clone(),
            unet: self.unet.clone(),
            fusion: self.fusion.clone(),
        }
    }

    pub(crate) fn check_image(&self, x: &Tensor<T>, channels: usize, op: &'static str) -> Result<()> {
        let s = self.config.input_size();
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != channels || shape[2] != s || shape[3] != s || shape[0] == 0 {
            return Err(shape_error(op, format!("expected [B, {channels}, {s}, {s}], got {shape:?}")).into());
        }
        Ok(())
    }

    fn conv_relu(&self, g: &Graph<T>, b: &Bound, x: Var, c: Conv, pad: usize) -> Result<Var> {
        let y = g.conv2d(x, b.var(c.w), Some(b.var(c.b)), 1, pad)?;
        Ok(g.relu(y)?)
    }

    fn encode(&self, g: &Graph<T>, b: &Bound, enc: &Encoder, x: Var) -> Result<LatentVars> {
        let per_block = self.config.encoder.convs_per_block;
        let mut h = x;
        for block in enc.convs.chunks(per_block) {
            for &c in block {
                h = self.conv_relu(g, b, h, c, 1)?;
            }
            h = g.avg_pool2d(h, 2)?;
        }
        let pooled = g.global_avg_pool(h)?;
        let raw = g.linear(pooled, b.var(enc.head_w), Some(b.var(enc.head_b)))?;
        let n = self.config.latent_dim();
        let mu = g.slice_cols(raw, 0, n)?;
        let s = g.slice_cols(raw, n, n)?;
        let sigma = g.softplus(s)?;
        Ok(LatentVars { mu, sigma })
    }

    /// Prior network on a `[B, 1, S, S]` ultrasound batch.
    pub fn encode_prior(&self, g: &Graph<T>, b: &Bound, x_us: Var) -> Result<LatentVars> {
        debug_assert_eq!(self.prior.in_channels, 1);
        self.check_var(g, x_us, 1, "encode_prior")?;
        self.encode(g, b, &self.prior, x_us)
    }

    /// Posterior network on ultrasound and segmentation stacked as channels.
    pub fn encode_posterior(&self, g: &Graph<T>, b: &Bound, x_us: Var, x_seg: Var) -> Result<LatentVars> {
        self.check_var(g, x_us, 1, "encode_posterior")?;
        self.check_var(g, x_seg, 1, "encode_posterior")?;
        let x = g.concat_channels(x_us, x_seg)?;
        debug_assert_eq!(self.posterior.in_channels, 2);
        self.encode(g, b, &self.posterior, x)
    }

    fn check_var(&self, g: &Graph<T>, x: Var, channels: usize, op: &'static str) -> Result<()> {
        let s = self.config.input_size();
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != channels || shape[2] != s || shape[3] != s {
            return Err(shape_error(op, format!("expected [B, {channels}, {s}, {s}], got {shape:?}")).into());
        }
        Ok(())
    }

    /// U-Net trunk; returns the last activation map `[B, C_f, S, S]`.
    pub fn unet_forward(&self, g: &Graph<T>, b: &Bound, x_us: Var) -> Result<Var> {
        self.check_var(g, x_us, 1, "unet_forward")?;
        let levels = self.unet.down.len();
        let mut skips = Vec::with_capacity(levels);
        let mut h = x_us;
        for (l, [c0, c1]) in self.unet.down.iter().enumerate() {
            if l > 0 {
                h = g.avg_pool2d(h, 2)?;
            }
            h = self.conv_relu(g, b, h, *c0, 1)?;
            h = self.conv_relu(g, b, h, *c1, 1)?;
            skips.push(h);
        }
        if levels == 1 {
            if let Some([c0, c1]) = self.unet.up.first() {
                h = self.conv_relu(g, b, h, *c0, 1)?;
                h = self.conv_relu(g, b, h, *c1, 1)?;
            }
            return Ok(h);
        }
        for (i, [c0, c1]) in self.unet.up.iter().enumerate() {
            let l = levels - 2 - i;
            let up = g.bilinear_upsample2x(h)?;
            let cat = g.concat_channels(up, skips[l])?;
            h = self.conv_relu(g, b, cat, *c0, 1)?;
            h = self.conv_relu(g, b, h, *c1, 1)?;
        }
        Ok(h)
    }

    /// Tiles `z: [B, N]` over the feature map, concatenates, and applies the
    /// 1×1 fusion stack. Returns logits `[B, 1, S, S]`.
    pub fn fuse_and_predict(&self, g: &Graph<T>, b: &Bound, features: Var, z: Var) -> Result<Var> {
        let fs = g.shape(features);
        let zs = g.shape(z);
        if fs.len() != 4 || zs.len() != 2 || zs[0] != fs[0] || zs[1] != self.config.latent_dim() {
            return Err(shape_error(
                "fuse_and_predict",
                format!("features {fs:?} vs latent {zs:?} (latent dim {})", self.config.latent_dim()),
            )
            .into());
        }
        let tiled = g.tile_latent(z, fs[2], fs[3])?;
        let mut h = g.concat_channels(features, tiled)?;
        for &c in &self.fusion.hidden {
            h = self.conv_relu(g, b, h, c, 0)?;
        }
        Ok(g.conv2d(h, b.var(self.fusion.out.w), Some(b.var(self.fusion.out.b)), 1, 0)?)
    }

    /// Reparameterised sample `z = μ + σ ⊙ ε`, differentiable through μ and σ.
    pub fn sample_latent<R: Rng + ?Sized>(&self, g: &Graph<T>, dist: LatentVars, rng: &mut R) -> Result<Var> {
        let shape = g.shape(dist.mu);
        let eps = Tensor::from_fn(&shape, |_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)));
        let eps = g.constant(eps)?;
        let scaled = g.mul(dist.sigma, eps)?;
        Ok(g.add(dist.mu, scaled)?)
    }
}

/// Reads the `i`-th row of a `[B, N]` pair of graph values.
pub fn latent_row<T: Element>(g: &Graph<T>, vars: LatentVars, i: usize) -> Result<LatentGaussian> {
    let (mu, sigma) = (g.value(vars.mu), g.value(vars.sigma));
    let n = mu.shape()[1];
    let row = |t: &Tensor<T>| t.data()[i * n..(i + 1) * n].iter().map(|v| v.as_f64()).collect();
    LatentGaussian::new(row(&mu), row(&sigma))
}
