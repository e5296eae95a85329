//! Per-channel conditioning: zero-phase band-pass, burst-interval block
//! splitting and 4× polyphase upsampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::sum_product;
use crate::matrix::Matrix;
use crate::par::Backend;
use crate::sim::{synthesize_burst, BurstConfig, MultichannelRecording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandpassSpec {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub taps: usize,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        BandpassSpec {
            center_hz: 62_000.0,
            bandwidth_hz: 10_000.0,
            taps: 255,
        }
    }
}

impl BandpassSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let lo = self.center_hz - self.bandwidth_hz / 2.0;
        let hi = self.center_hz + self.bandwidth_hz / 2.0;
        if !(lo > 0.0 && hi < sample_rate_hz / 2.0) {
            return Err(Error::Filter(format!(
                "band [{lo}, {hi}] Hz must lie inside (0, {}) Hz",
                sample_rate_hz / 2.0
            )));
        }
        if self.taps % 2 == 0 || self.taps == 0 {
            return Err(Error::Filter(format!("tap count must be odd, got {}", self.taps)));
        }
        Ok(())
    }

    /// Hamming-windowed sinc band-pass taps, scaled to unit gain at the center.
    pub fn design(&self, sample_rate_hz: f64) -> Result<Vec<f64>> {
        self.validate(sample_rate_hz)?;
        let f1 = (self.center_hz - self.bandwidth_hz / 2.0) / sample_rate_hz;
        let f2 = (self.center_hz + self.bandwidth_hz / 2.0) / sample_rate_hz;
        let n = self.taps;
        let mid = (n - 1) as f64 / 2.0;
        let lowpass = |fc: f64, x: f64| {
            if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            }
        };
        let mut h: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 - mid;
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                w * (lowpass(f2, x) - lowpass(f1, x))
            })
            .collect();
        let gain = frequency_response(&h, self.center_hz / sample_rate_hz);
        h.iter_mut().for_each(|v| *v /= gain);
        Ok(h)
    }
}

/// Magnitude response of a symmetric FIR at normalized frequency `f` (cycles/sample).
pub fn frequency_response(taps: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &h) in taps.iter().enumerate() {
        let ph = -2.0 * PI * f * i as f64;
        re += h * ph.cos();
        im += h * ph.sin();
    }
    re.hypot(im)
}

/// Centered ("same") FIR convolution with zero padding.
fn convolve_same(x: &[f64], taps: &[f64], out: &mut [f64]) {
    let n = x.len() as isize;
    let half = (taps.len() / 2) as isize;
    let reversed: Vec<f64> = taps.iter().rev().copied().collect();
    for (t, o) in out.iter_mut().enumerate() {
        let t = t as isize;
        // y[t] = sum_k h[k] x[t + half - k]
        let start = t + half + 1 - taps.len() as isize;
        if start >= 0 && t + half < n {
            *o = sum_product(&reversed, &x[start as usize..(t + half + 1) as usize]);
            continue;
        }
        let k_lo = (t + half - (n - 1)).max(0) as usize;
        let k_hi = ((t + half).min(taps.len() as isize - 1)) as usize;
        let mut acc = 0.0;
        for k in k_lo..=k_hi {
            acc += taps[k] * x[(t + half) as usize - k];
        }
        *o = acc;
    }
}

/// Zero-phase band-pass: forward pass, then a pass over the time-reversed signal.
pub fn bandpass(
    recording: &MultichannelRecording,
    spec: &BandpassSpec,
    backend: Backend,
) -> Result<MultichannelRecording> {
    let taps = spec.design(recording.sample_rate_hz)?;
    let t = recording.len();
    if taps.len() >= t {
        return Err(Error::Filter(format!(
            "{} taps need more than the {t} available samples",
            taps.len()
        )));
    }
    let mut out = Matrix::zeros(recording.samples.rows(), t);
    backend.for_each_row(out.as_mut_slice(), t, |r, row| {
        let x: Vec<f64> = recording.samples.row(r).iter().map(|&v| v as f64).collect();
        let mut y = vec![0.0; t];
        convolve_same(&x, &taps, &mut y);
        y.reverse();
        let mut z = vec![0.0; t];
        convolve_same(&y, &taps, &mut z);
        z.reverse();
        row.iter_mut().zip(z).for_each(|(o, v)| *o = v as f32);
    });
    Ok(MultichannelRecording {
        samples: out,
        sample_rate_hz: recording.sample_rate_hz,
        geometry: recording.geometry.clone(),
    })
}

/// Range gate selecting the reflected-wave window, in one-way meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeGate {
    pub min_range_m: f64,
    pub max_range_m: f64,
}

impl Default for RangeGate {
    fn default() -> Self {
        RangeGate {
            min_range_m: 0.8,
            max_range_m: 3.5,
        }
    }
}

impl RangeGate {
    /// `(guard, length)` in samples: the reflected window starts `guard`
    /// samples after the direct onset and covers echoes from the whole gate.
    pub fn window(&self, speed_of_sound: f64, config: &BurstConfig) -> Result<(usize, usize)> {
        if !(self.min_range_m >= 0.0 && self.max_range_m > self.min_range_m) {
            return Err(Error::Config(format!(
                "invalid range gate [{}, {}] m",
                self.min_range_m, self.max_range_m
            )));
        }
        let fs = config.sample_rate_hz;
        let guard = (2.0 * self.min_range_m / speed_of_sound * fs).round() as usize;
        let span = (2.0 * (self.max_range_m - self.min_range_m) / speed_of_sound * fs).round() as usize;
        Ok((guard, span + config.burst_len()))
    }
}

/// One burst interval split into its direct and reflected windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoBlock {
    /// All channels over the whole interval.
    pub block: Matrix,
    pub direct: Matrix,
    pub reflected: Matrix,
    pub direct_onset_sample: usize,
    pub block_start_sample: usize,
    /// Absolute index of the first reflected-window sample.
    pub reflected_start_sample: usize,
    pub sample_rate_hz: f64,
}

impl EchoBlock {
    /// Upsamples the whole block 4× and then extracts the reflected window.
    pub fn upsampled_reflected(&self, backend: Backend) -> Result<Matrix> {
        let up = upsample4x_with(&self.block, backend);
        let start = UPSAMPLE_FACTOR * (self.reflected_start_sample - self.block_start_sample);
        up.columns(start, start + UPSAMPLE_FACTOR * self.reflected.cols())
    }
}

/// Quadrature matched-filter envelope of `x` against `burst` at every lag.
pub fn matched_filter_envelope(x: &[f64], config: &BurstConfig) -> Result<Vec<f64>> {
    let burst = synthesize_burst(config)?;
    let w = 2.0 * PI * config.carrier_hz / config.sample_rate_hz;
    // quadrature companion: the same envelope with a cosine carrier
    let quad: Vec<f64> = burst
        .iter()
        .enumerate()
        .map(|(i, _)| (w * i as f64).cos())
        .collect();
    let n = burst.len();
    if x.len() < n {
        return Ok(Vec::new());
    }
    Ok((0..=x.len() - n)
        .map(|t| {
            let seg = &x[t..t + n];
            let i: f64 = seg.iter().zip(&burst).map(|(a, b)| a * b).sum();
            let q: f64 = seg.iter().zip(&quad).map(|(a, b)| a * b).sum();
            i.hypot(q)
        })
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Detection threshold relative to the median matched-filter envelope.
pub const ONSET_THRESHOLD: f64 = 5.0;

/// Splits a (band-passed) recording into one block per burst interval.
pub fn split_blocks(
    recording: &MultichannelRecording,
    config: &BurstConfig,
    gate: &RangeGate,
) -> Result<Vec<EchoBlock>> {
    config.validate()?;
    let interval = config.interval_len();
    let count = recording.len() / interval;
    if count == 0 {
        return Err(Error::Config(format!(
            "recording of {} samples is shorter than one {interval}-sample interval",
            recording.len()
        )));
    }
    let burst_len = config.burst_len();
    let (guard, reflect_len) = gate.window(recording.geometry.speed_of_sound, config)?;
    let mean = recording.samples.mean_row();
    let mut blocks = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * interval;
        let env = matched_filter_envelope(&mean[start..start + interval], config)?;
        let (peak_idx, peak) = env
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
        let med = median(&env);
        if !(peak > ONSET_THRESHOLD * med) {
            return Err(Error::BlockDetection {
                interval: i,
                reason: format!("matched-filter peak {peak:.3e} not above {ONSET_THRESHOLD}x median {med:.3e}"),
            });
        }
        let onset = start + peak_idx;
        let refl_start = onset + guard;
        if refl_start + reflect_len > start + interval {
            return Err(Error::BlockDetection {
                interval: i,
                reason: format!(
                    "reflected window [{refl_start}, {}) runs past the interval end {}",
                    refl_start + reflect_len,
                    start + interval
                ),
            });
        }
        let samples = &recording.samples;
        blocks.push(EchoBlock {
            block: samples.columns(start, start + interval)?,
            direct: samples.columns(onset, (onset + burst_len).min(start + interval))?,
            reflected: samples.columns(refl_start, refl_start + reflect_len)?,
            direct_onset_sample: onset,
            block_start_sample: start,
            reflected_start_sample: refl_start,
            sample_rate_hz: recording.sample_rate_hz,
        });
    }
    Ok(blocks)
}

pub const UPSAMPLE_FACTOR: usize = 4;
/// Prototype length of the interpolation filter.
pub const UPSAMPLE_PROTOTYPE: usize = 128;
const PHASE_TAPS: usize = UPSAMPLE_PROTOTYPE / UPSAMPLE_FACTOR;

/// Polyphase branches: `phases[p][j]` weighs `x[i - j + PHASE_TAPS/2]` for
/// output `4i + p`. Each branch is normalized to unit DC gain.
pub fn upsample_phases() -> [[f64; PHASE_TAPS]; UPSAMPLE_FACTOR] {
    let l = UPSAMPLE_FACTOR as f64;
    let half_support = (UPSAMPLE_PROTOTYPE / 2) as f64;
    let mut phases = [[0.0; PHASE_TAPS]; UPSAMPLE_FACTOR];
    for (p, branch) in phases.iter_mut().enumerate() {
        for (j, w) in branch.iter_mut().enumerate() {
            // offset (in output samples) between the output and the input sample
            let d = (j as f64 - (PHASE_TAPS / 2) as f64) * l + p as f64;
            let x = d / l;
            let sinc = if x == 0.0 {
                1.0
            } else if x.fract() == 0.0 {
                0.0
            } else {
                (PI * x).sin() / (PI * x)
            };
            let t = PI * d / half_support;
            let win = if d.abs() >= half_support {
                0.0
            } else {
                0.42 + 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
            };
            *w = sinc * win;
        }
        let s: f64 = branch.iter().sum();
        branch.iter_mut().for_each(|w| *w /= s);
    }
    phases
}

fn upsample_row(x: &[f32], phases: &[[f64; PHASE_TAPS]; UPSAMPLE_FACTOR], out: &mut [f32]) {
    let n = x.len() as isize;
    let half = (PHASE_TAPS / 2) as isize;
    for i in 0..x.len() {
        for (p, branch) in phases.iter().enumerate() {
            let mut acc = 0.0f64;
            for (j, &w) in branch.iter().enumerate() {
                let src = i as isize - j as isize + half;
                if (0..n).contains(&src) {
                    acc += w * x[src as usize] as f64;
                }
            }
            out[UPSAMPLE_FACTOR * i + p] = acc as f32;
        }
    }
}

/// 4× upsampling of every row; output length is `4T`.
pub fn upsample4x(samples: &Matrix, _sample_rate_hz: f64) -> Matrix {
    upsample4x_with(samples, Backend::default())
}

pub fn upsample4x_with(samples: &Matrix, backend: Backend) -> Matrix {
    let phases = upsample_phases();
    let t = samples.cols();
    let mut out = Matrix::zeros(samples.rows(), UPSAMPLE_FACTOR * t);
    backend.for_each_row(out.as_mut_slice(), UPSAMPLE_FACTOR * t, |r, row| {
        upsample_row(samples.row(r), &phases, row)
    });
    out
}
