//! Define-by-run tape.
//!
//! Every op appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse once. A consumed graph must be [`Graph::reset`]
//! before it records again, so gradients never accumulate silently across
//! passes.

use std::cell::{Cell, Ref, RefCell};

use echoseg_core::par::Backend;

use crate::conv::{self, ConvGeom};
use crate::element::Element;
use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    AvgPool2d {
        input: Var,
        k: usize,
    },
    Upsample2x(Var),
    Concat(Var, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    TileLatent(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    BceWithLogits {
        logits: Var,
        target: Vec<T>,
    },
    KlDiag([Var; 4]),
    LatentMse([Var; 4]),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    backend: Backend,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Source index pairs and upper weight for 2× bilinear upsampling along one
/// axis (pixel-center aligned, edge-clamped).
fn upsample_axis(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let p = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        })
        .collect()
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self::with_backend(Backend::default())
    }

    pub fn with_backend(backend: Backend) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            backend,
        }
    }

    /// Clears the tape so the graph can record a new pass.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.consumed.set(false);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Result<Var> {
        if self.consumed.get() {
            return Err(NnError::GraphConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Result<Var> {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.0].value)
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, x: Var, op: Op<T>, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = {
            let v = self.value(x);
            Tensor::new(
                v.shape(),
                v.data().iter().map(|&a| T::from_f64_lossy(f(a.as_f64()))).collect(),
            )?
        };
        self.push(out, self.requires(&[x]), op)
    }

    pub fn conv2d(&self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = {
            let (x, w) = (self.value(input), self.value(weight));
            let b = bias.map(|b| self.value(b));
            let g = ConvGeom::new(&x, &w, b.as_deref(), stride, padding)?;
            let data = conv::forward(&g, x.data(), w.data(), b.as_ref().map(|b| b.data()), self.backend);
            Tensor::new(&[g.batch, g.out_c, g.oh, g.ow], data)?
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        self.push(
            out,
            self.requires(&deps),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        )
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn avg_pool2d(&self, input: Var, k: usize) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [n, c, h, w] = x.dims4("avg_pool2d")?;
            if k == 0 || h % k != 0 || w % k != 0 {
                return Err(shape_err(
                    "avg_pool2d",
                    format!("window {k} does not tile input {:?}", x.shape()),
                ));
            }
            let (oh, ow) = (h / k, w / k);
            let norm = 1.0 / (k * k) as f64;
            let xd = x.data();
            let mut out = Vec::with_capacity(n * c * oh * ow);
            for plane in xd.chunks(h * w) {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                acc += plane[(oy * k + dy) * w + ox * k + dx].as_f64();
                            }
                        }
                        out.push(T::from_f64_lossy(acc * norm));
                    }
                }
            }
            Tensor::new(&[n, c, oh, ow], out)?
        };
        self.push(out, self.requires(&[input]), Op::AvgPool2d { input, k })
    }

    /// Bilinear 2× upsampling; doubles H and W.
    pub fn bilinear_upsample2x(&self, input: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [n, c, h, w] = x.dims4("bilinear_upsample2x")?;
            if h == 0 || w == 0 {
                return Err(shape_err("bilinear_upsample2x", "empty spatial dims"));
            }
            let (ay, ax) = (upsample_axis(h), upsample_axis(w));
            let mut out = Vec::with_capacity(n * c * 4 * h * w);
            for plane in x.data().chunks(h * w) {
                for &(y0, y1, fy) in &ay {
                    for &(x0, x1, fx) in &ax {
                        let v = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                        let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                        out.push(T::from_f64_lossy(top * (1.0 - fy) + bot * fy));
                    }
                }
            }
            Tensor::new(&[n, c, 2 * h, 2 * w], out)?
        };
        self.push(out, self.requires(&[input]), Op::Upsample2x(input))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            let [n, ca, h, w] = va.dims4("concat_channels")?;
            let [nb, cb, hb, wb] = vb.dims4("concat_channels")?;
            if (n, h, w) != (nb, hb, wb) {
                return Err(shape_err(
                    "concat_channels",
                    format!("{:?} vs {:?}", va.shape(), vb.shape()),
                ));
            }
            let hw = h * w;
            let mut out = Vec::with_capacity(n * (ca + cb) * hw);
            for i in 0..n {
                out.extend_from_slice(&va.data()[i * ca * hw..(i + 1) * ca * hw]);
                out.extend_from_slice(&vb.data()[i * cb * hw..(i + 1) * cb * hw]);
            }
            Tensor::new(&[n, ca + cb, h, w], out)?
        };
        self.push(out, self.requires(&[a, b]), Op::Concat(a, b))
    }

    /// `y = x·Wᵀ + b` with `x: [B, I]`, `W: [O, I]`, `b: [O]`.
    pub fn linear(&self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = {
            let (x, w) = (self.value(input), self.value(weight));
            let [bsz, i] = x.dims2("linear")?;
            let [o, wi] = w.dims2("linear")?;
            if wi != i {
                return Err(shape_err("linear", format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
            }
            let mut out = vec![T::zero(); bsz * o];
            let beta = if let Some(b) = bias {
                let b = self.value(b);
                if b.shape() != [o] {
                    return Err(shape_err("linear", format!("bias {:?} vs weight {:?}", b.shape(), w.shape())));
                }
                for row in out.chunks_mut(o) {
                    row.copy_from_slice(b.data());
                }
                T::one()
            } else {
                T::zero()
            };
            T::gemm(bsz, i, o, T::one(), x.data(), (i as isize, 1), w.data(), (1, i as isize), beta, &mut out, (o as isize, 1));
            Tensor::new(&[bsz, o], out)?
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        self.push(out, self.requires(&deps), Op::Linear { input, weight, bias })
    }

    /// `[B, C, H, W] → [B, C]` spatial mean.
    pub fn global_avg_pool(&self, input: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [n, c, h, w] = x.dims4("global_avg_pool")?;
            let norm = 1.0 / (h * w) as f64;
            let data = x
                .data()
                .chunks(h * w)
                .map(|p| T::from_f64_lossy(p.iter().map(|v| v.as_f64()).sum::<f64>() * norm))
                .collect();
            Tensor::new(&[n, c], data)?
        };
        self.push(out, self.requires(&[input]), Op::GlobalAvgPool(input))
    }

    /// Columns `[start, start + len)` of a `[B, D]` tensor.
    pub fn slice_cols(&self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [b, d] = x.dims2("slice_cols")?;
            if start + len > d {
                return Err(shape_err("slice_cols", format!("{start}..{} of {d} columns", start + len)));
            }
            let data = x.data().chunks(d).flat_map(|r| r[start..start + len].iter().copied()).collect();
            Tensor::new(&[b, len], data)?
        };
        self.push(out, self.requires(&[input]), Op::SliceCols { input, start })
    }

    /// Broadcasts `[B, N]` to an `[B, N, H, W]` feature map.
    pub fn tile_latent(&self, z: Var, h: usize, w: usize) -> Result<Var> {
        let out = {
            let v = self.value(z);
            let [b, n] = v.dims2("tile_latent")?;
            let data = v
                .data()
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, h * w))
                .collect();
            Tensor::new(&[b, n, h, w], data)?
        };
        self.push(out, self.requires(&[z]), Op::TileLatent(z))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            if va.shape() != vb.shape() {
                return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
            }
            Tensor::new(va.shape(), va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect())?
        };
        self.push(out, self.requires(&[a, b]), op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sum_all(&self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), self.requires(&[x]), Op::SumAll(x))
    }

    pub fn mean_all(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.numel().max(1) as f64;
        let s: f64 = v.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
        drop(v);
        self.push(Tensor::scalar(T::from_f64_lossy(s)), self.requires(&[x]), Op::MeanAll(x))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against a 0/1 target,
    /// in the overflow-free form `max(l, 0) − l·y + ln(1 + e^{−|l|})`.
    pub fn bce_with_logits(&self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = {
            let l = self.value(logits);
            if l.shape() != target.shape() {
                return Err(shape_err(
                    "bce_with_logits",
                    format!("logits {:?} vs target {:?}", l.shape(), target.shape()),
                ));
            }
            if target.data().iter().any(|&y| y != T::zero() && y != T::one()) {
                return Err(NnError::Validation("bce target must be binary".into()));
            }
            let sum: f64 = l
                .data()
                .iter()
                .zip(target.data())
                .map(|(&l, &y)| {
                    let (l, y) = (l.as_f64(), y.as_f64());
                    l.max(0.0) - l * y + (-l.abs()).exp().ln_1p()
                })
                .sum();
            sum / l.numel().max(1) as f64
        };
        self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            self.requires(&[logits]),
            Op::BceWithLogits {
                logits,
                target: target.data().to_vec(),
            },
        )
    }

    fn check_gauss_pair(&self, vars: [Var; 4], op: &'static str) -> Result<(usize, usize)> {
        let shapes: Vec<Vec<usize>> = vars.iter().map(|&v| self.shape(v)).collect();
        if shapes.iter().any(|s| s != &shapes[0]) || shapes[0].len() != 2 {
            return Err(shape_err(op, format!("parameter shapes {shapes:?}")));
        }
        Ok((shapes[0][0], shapes[0][1]))
    }

    /// `KL(N(μq, σq²) ‖ N(μp, σp²))` for diagonal Gaussians, summed over the
    /// latent dimension and averaged over the batch. All inputs are `[B, N]`;
    /// σ are standard deviations.
    pub fn kl_diag_gauss(&self, mu_q: Var, sig_q: Var, mu_p: Var, sig_p: Var) -> Result<Var> {
        let vars = [mu_q, sig_q, mu_p, sig_p];
        let (b, _) = self.check_gauss_pair(vars, "kl_diag_gauss")?;
        let value = {
            let v: Vec<Ref<'_, Tensor<T>>> = vars.iter().map(|&x| self.value(x)).collect();
            if v[1].data().iter().chain(v[3].data()).any(|s| !(s.as_f64() > 0.0)) {
                return Err(NnError::Validation("standard deviations must be positive".into()));
            }
            let mut acc = 0.0;
            for i in 0..v[0].numel() {
                let (mq, sq, mp, sp) = (
                    v[0].data()[i].as_f64(),
                    v[1].data()[i].as_f64(),
                    v[2].data()[i].as_f64(),
                    v[3].data()[i].as_f64(),
                );
                acc += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
            }
            acc / b.max(1) as f64
        };
        self.push(Tensor::scalar(T::from_f64_lossy(value)), self.requires(&vars), Op::KlDiag(vars))
    }

    /// `(1/N) Σ (μa − μb)² + (1/N) Σ (σa − σb)²`, averaged over the batch.
    pub fn latent_mse(&self, mu_a: Var, sig_a: Var, mu_b: Var, sig_b: Var) -> Result<Var> {
        let vars = [mu_a, sig_a, mu_b, sig_b];
        let (b, n) = self.check_gauss_pair(vars, "latent_mse")?;
        let value = {
            let v: Vec<Ref<'_, Tensor<T>>> = vars.iter().map(|&x| self.value(x)).collect();
            let sq = |x: &Tensor<T>, y: &Tensor<T>| -> f64 {
                x.data().iter().zip(y.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum()
            };
            (sq(&v[0], &v[2]) + sq(&v[1], &v[3])) / (n.max(1) * b.max(1)) as f64
        };
        self.push(Tensor::scalar(T::from_f64_lossy(value)), self.requires(&vars), Op::LatentMse(vars))
    }

    /// Reverse pass from a one-element `loss`. Consumes the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(NnError::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if nodes[loss.0].value.numel() != 1 {
            return Err(NnError::NonScalarLoss(loss_shape.to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            self.backward_node(&nodes, node, &gout, &mut grads);
        }
        let out = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match (&n.op, g) {
                (Op::Leaf, Some(g)) if n.requires_grad => Some(
                    Tensor::new(n.value.shape(), g.into_iter().map(T::from_f64_lossy).collect())
                        .expect("gradient matches value shape"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backward_node(&self, nodes: &[Node<T>], node: &Node<T>, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let mut accumulate = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (x, w) = (val(*input), val(*weight));
                let g = ConvGeom::new(x, w, bias.map(|b| val(b)), *stride, *padding).expect("validated in forward");
                let dout: Vec<T> = gout.iter().map(|&v| T::from_f64_lossy(v)).collect();
                let need = (wants(*input), wants(*weight), bias.is_some_and(wants));
                let cg = conv::backward(&g, x.data(), w.data(), &dout, need, self.backend);
                let widen = |v: Vec<T>| v.into_iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
                if let Some(dx) = cg.dx {
                    accumulate(*input, widen(dx));
                }
                if let Some(dw) = cg.dw {
                    accumulate(*weight, widen(dw));
                }
                if let (Some(b), Some(db)) = (bias, cg.db) {
                    accumulate(*b, widen(db));
                }
            }
            Op::Relu(x) => {
                let d = out.data().iter().zip(gout).map(|(&y, &g)| if y > T::zero() { g } else { 0.0 }).collect();
                accumulate(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = out
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| {
                        let y = y.as_f64();
                        g * y * (1.0 - y)
                    })
                    .collect();
                accumulate(*x, d);
            }
            Op::Softplus(x) => {
                let d = val(*x).data().iter().zip(gout).map(|(&a, &g)| g * sigmoid(a.as_f64())).collect();
                accumulate(*x, d);
            }
            Op::Scale(x, c) => accumulate(*x, gout.iter().map(|g| g * c).collect()),
            Op::AvgPool2d { input, k } => {
                let [n, c, h, w] = val(*input).dims4("avg_pool2d").expect("validated");
                let (oh, ow) = (h / k, w / k);
                let norm = 1.0 / (k * k) as f64;
                let mut d = vec![0.0; n * c * h * w];
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let go = &gout[p * oh * ow..(p + 1) * oh * ow];
                    for y in 0..h {
                        for x in 0..w {
                            plane[y * w + x] = go[(y / k) * ow + x / k] * norm;
                        }
                    }
                }
                accumulate(*input, d);
            }
            Op::Upsample2x(input) => {
                let [n, c, h, w] = val(*input).dims4("bilinear_upsample2x").expect("validated");
                let (ay, ax) = (upsample_axis(h), upsample_axis(w));
                let mut d = vec![0.0; n * c * h * w];
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let go = &gout[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                            let g = go[oy * 2 * w + ox];
                            plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                            plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                            plane[y1 * w + x0] += g * fy * (1.0 - fx);
                            plane[y1 * w + x1] += g * fy * fx;
                        }
                    }
                }
                accumulate(*input, d);
            }
            Op::Concat(a, b) => {
                let [n, ca, h, w] = val(*a).dims4("concat_channels").expect("validated");
                let cb = val(*b).shape()[1];
                let hw = h * w;
                let (mut da, mut db) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * cb * hw));
                for chunk in gout.chunks((ca + cb) * hw) {
                    da.extend_from_slice(&chunk[..ca * hw]);
                    db.extend_from_slice(&chunk[ca * hw..]);
                }
                accumulate(*a, da);
                accumulate(*b, db);
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (val(*input), val(*weight));
                let [bsz, i] = x.dims2("linear").expect("validated");
                let o = w.shape()[0];
                if wants(*input) {
                    let wd: Vec<f64> = w.data().iter().map(|v| v.as_f64()).collect();
                    let mut dx = vec![0.0; bsz * i];
                    f64::gemm(bsz, o, i, 1.0, gout, (o as isize, 1), &wd, (i as isize, 1), 0.0, &mut dx, (i as isize, 1));
                    accumulate(*input, dx);
                }
                if wants(*weight) {
                    let xd: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
                    let mut dw = vec![0.0; o * i];
                    f64::gemm(o, bsz, i, 1.0, gout, (1, o as isize), &xd, (i as isize, 1), 0.0, &mut dw, (i as isize, 1));
                    accumulate(*weight, dw);
                }
                if let Some(b) = bias {
                    let mut db = vec![0.0; o];
                    for row in gout.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    accumulate(*b, db);
                }
            }
            Op::GlobalAvgPool(input) => {
                let [_, _, h, w] = val(*input).dims4("global_avg_pool").expect("validated");
                let norm = 1.0 / (h * w) as f64;
                let d = gout.iter().flat_map(|&g| std::iter::repeat_n(g * norm, h * w)).collect();
                accumulate(*input, d);
            }
            Op::SliceCols { input, start } => {
                let [b, dcols] = val(*input).dims2("slice_cols").expect("validated");
                let len = out.shape()[1];
                let mut d = vec![0.0; b * dcols];
                for r in 0..b {
                    d[r * dcols + start..r * dcols + start + len].copy_from_slice(&gout[r * len..(r + 1) * len]);
                }
                accumulate(*input, d);
            }
            Op::TileLatent(z) => {
                let [_, _, h, w] = out.dims4("tile_latent").expect("validated");
                let d = gout.chunks(h * w).map(|c| c.iter().sum()).collect();
                accumulate(*z, d);
            }
            Op::Add(a, b) => {
                accumulate(*a, gout.to_vec());
                accumulate(*b, gout.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(*a, vb.data().iter().zip(gout).map(|(y, g)| y.as_f64() * g).collect());
                }
                if wants(*b) {
                    accumulate(*b, va.data().iter().zip(gout).map(|(x, g)| x.as_f64() * g).collect());
                }
            }
            Op::SumAll(x) => accumulate(*x, vec![gout[0]; val(*x).numel()]),
            Op::MeanAll(x) => {
                let n = val(*x).numel().max(1);
                accumulate(*x, vec![gout[0] / n as f64; n]);
            }
            Op::BceWithLogits { logits, target } => {
                let l = val(*logits);
                let scale = gout[0] / l.numel().max(1) as f64;
                let d = l
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&l, &y)| scale * (sigmoid(l.as_f64()) - y.as_f64()))
                    .collect();
                accumulate(*logits, d);
            }
            Op::KlDiag(vars) => {
                let [mq, sq, mp, sp] = vars.map(|v| val(v).data().iter().map(|x| x.as_f64()).collect::<Vec<_>>());
                let b = val(vars[0]).shape()[0].max(1) as f64;
                let s = gout[0] / b;
                let n = mq.len();
                let (mut dmq, mut dsq, mut dmp, mut dsp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let diff = mq[i] - mp[i];
                    let vp = sp[i] * sp[i];
                    dmq[i] = s * diff / vp;
                    dmp[i] = -s * diff / vp;
                    dsq[i] = s * (-1.0 / sq[i] + sq[i] / vp);
                    dsp[i] = s * (1.0 / sp[i] - (sq[i] * sq[i] + diff * diff) / (vp * sp[i]));
                }
                accumulate(vars[0], dmq);
                accumulate(vars[1], dsq);
                accumulate(vars[2], dmp);
                accumulate(vars[3], dsp);
            }
            Op::LatentMse(vars) => {
                let [ma, sa, mb, sb] = vars.map(|v| val(v).data().iter().map(|x| x.as_f64()).collect::<Vec<_>>());
                let shape = val(vars[0]).shape();
                let s = 2.0 * gout[0] / (shape[0] * shape[1]).max(1) as f64;
                let dm: Vec<f64> = ma.iter().zip(&mb).map(|(a, b)| s * (a - b)).collect();
                let ds: Vec<f64> = sa.iter().zip(&sb).map(|(a, b)| s * (a - b)).collect();
                accumulate(vars[0], dm.clone());
                accumulate(vars[2], dm.into_iter().map(|v| -v).collect());
                accumulate(vars[1], ds.clone());
                accumulate(vars[3], ds.into_iter().map(|v| -v).collect());
            }
        }
    }
}
