//! im2col + GEMM convolution kernels.

use echoseg_core::par::Backend;

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new<T: Element>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [batch, in_c, h, w] = x.dims4("conv2d")?;
        let [out_c, wc, kh, kw] = weight.dims4("conv2d")?;
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be at least 1"));
        }
        if wc != in_c {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} vs weight {:?}: channel mismatch", x.shape(), weight.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [out_c] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} vs weight {:?}", b.shape(), weight.shape()),
                ));
            }
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} larger than padded input {:?}", weight.shape(), x.shape()),
            ));
        }
        Ok(ConvGeom {
            batch,
            in_c,
            h,
            w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose stride-1 tap `j` lands inside the row.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(j).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(j).min(self.ow).max(lo);
        (lo, hi)
    }

    fn im2col<T: Element>(&self, x: &[T]) -> Vec<T> {
        let mut col = Vec::with_capacity(self.patch() * self.out_pixels());
        let zero = T::zero();
        for c in 0..self.in_c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let (lo, hi) = self.valid_cols(j);
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            col.resize(col.len() + self.ow, zero);
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        if self.stride == 1 {
                            col.resize(col.len() + lo, zero);
                            if lo < hi {
                                let start = lo + j - self.pad;
                                col.extend_from_slice(&src[start..start + hi - lo]);
                            }
                            col.resize(col.len() + self.ow - hi, zero);
                            continue;
                        }
                        col.extend((0..self.ow).map(|ox| {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            if xx < 0 || xx >= self.w as isize {
                                zero
                            } else {
                                src[xx as usize]
                            }
                        }));
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Element>(&self, col: &[T], dx: &mut [T]) {
        let p = self.out_pixels();
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_cols(j);
                            if lo < hi {
                                let start = y as usize * self.w + lo + j - self.pad;
                                let dst = &mut plane[start..start + hi - lo];
                                let src = &row[oy * self.ow + lo..oy * self.ow + hi];
                                dst.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                            }
                            continue;
                        }
                        for ox in 0..self.ow {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            if xx >= 0 && xx < self.w as isize {
                                plane[y as usize * self.w + xx as usize] =
                                    plane[y as usize * self.w + xx as usize] + row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    backend: Backend,
) -> Vec<T> {
    let (k, p, in_len) = (g.patch(), g.out_pixels(), g.in_c * g.h * g.w);
    let per_item = backend.map_range(g.batch, |b| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let mut out = vec![T::zero(); g.out_c * p];
        if let Some(bias) = bias {
            for (o, chunk) in out.chunks_mut(p).enumerate() {
                chunk.fill(bias[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let owned;
        let col: &[T] = if g.is_pointwise() {
            xb
        } else {
            owned = g.im2col(xb);
            &owned
        };
        T::gemm(
            g.out_c,
            k,
            p,
            T::one(),
            weight,
            (k as isize, 1),
            col,
            (p as isize, 1),
            beta,
            &mut out,
            (p as isize, 1),
        );
        out
    });
    per_item.concat()
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    need: (bool, bool, bool),
    backend: Backend,
) -> ConvGrads<T> {
    let (k, p, in_len) = (g.patch(), g.out_pixels(), g.in_c * g.h * g.w);
    let (need_dx, need_dw, need_db) = need;
    let per_item = backend.map_range(g.batch, |b| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let db_ = &dout[b * g.out_c * p..(b + 1) * g.out_c * p];
        let dw = need_dw.then(|| {
            let owned;
            let col: &[T] = if g.is_pointwise() {
                xb
            } else {
                owned = g.im2col(xb);
                &owned
            };
            let mut dw = vec![T::zero(); g.out_c * k];
            T::gemm(
                g.out_c,
                p,
                k,
                T::one(),
                db_,
                (p as isize, 1),
                col,
                (1, p as isize),
                T::zero(),
                &mut dw,
                (k as isize, 1),
            );
            dw
        });
        let dx = need_dx.then(|| {
            let mut dcol = vec![T::zero(); k * p];
            T::gemm(
                k,
                g.out_c,
                p,
                T::one(),
                weight,
                (1, k as isize),
                db_,
                (p as isize, 1),
                T::zero(),
                &mut dcol,
                (p as isize, 1),
            );
            if g.is_pointwise() {
                dcol
            } else {
                let mut dx = vec![T::zero(); in_len];
                g.col2im(&dcol, &mut dx);
                dx
            }
        });
        (dx, dw)
    });

    let mut dx_all = need_dx.then(|| Vec::with_capacity(g.batch * in_len));
    let mut dw_all = need_dw.then(|| vec![0.0f64; g.out_c * k]);
    for (dx, dw) in per_item {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend(dx);
        }
        if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
            all.iter_mut().zip(dw).for_each(|(a, v)| *a += v.as_f64());
        }
    }
    let db = need_db.then(|| {
        (0..g.out_c)
            .map(|o| {
                let mut acc = 0.0f64;
                for b in 0..g.batch {
                    let start = (b * g.out_c + o) * p;
                    acc += dout[start..start + p].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                T::from_f64_lossy(acc)
            })
            .collect()
    });
    ConvGrads {
        dx: dx_all,
        dw: dw_all.map(|v| v.into_iter().map(T::from_f64_lossy).collect()),
        db,
    }
}
