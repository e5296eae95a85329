//! Delay-and-sum imaging: steering delays, directional power maps, reference
//! subtraction and normalization into ultrasound images.

use serde::{Deserialize, Serialize};

use crate::dsp::{bandpass, split_blocks, BandpassSpec, RangeGate, UPSAMPLE_FACTOR};
use crate::error::{Error, Result};
use crate::geometry::{dot, unit_direction, ArrayGeometry};
use crate::grid::ObservationGrid;
use crate::image::Image;
use crate::interp::{sum_product, FractionalDelay, TAPS};
use crate::matrix::Matrix;
use crate::par::Backend;
use crate::sim::{BurstConfig, MultichannelRecording};

/// Far-field steering delays (seconds) relative to the array centroid:
/// `Δ_m = u(θ, φ) · (p_m − centroid) / c`.
pub fn steering_delays(geometry: &ArrayGeometry, azimuth_deg: f64, polar_deg: f64) -> Vec<f64> {
    let u = unit_direction(azimuth_deg, polar_deg);
    let c = geometry.centroid();
    geometry
        .mic_positions
        .iter()
        .map(|p| {
            let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            dot(&u, &rel) / geometry.speed_of_sound
        })
        .collect()
}

/// Beamformed power over the observation grid (rows = polar, cols = azimuth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalHeatMap {
    pub values: Vec<f64>,
    pub grid: ObservationGrid,
}

impl DirectionalHeatMap {
    pub fn new(values: Vec<f64>, grid: ObservationGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}-cell grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(DirectionalHeatMap { values, grid })
    }

    /// Row-major first index of the maximum value.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax_direction(&self) -> (f64, f64) {
        self.grid.direction(self.argmax())
    }

    /// Elementwise mean of equally-gridded maps.
    pub fn mean(maps: &[DirectionalHeatMap]) -> Result<DirectionalHeatMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Reference("no maps to average".into()))?;
        let mut acc = vec![0.0; first.values.len()];
        for m in maps {
            if m.grid != first.grid {
                return Err(Error::Shape("maps on different grids".into()));
            }
            acc.iter_mut().zip(&m.values).for_each(|(a, v)| *a += v);
        }
        let n = maps.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        DirectionalHeatMap::new(acc, first.grid.clone())
    }
}

/// Normalized ultrasound image on the observation grid; pixels in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltrasoundImage {
    pub pixels: Vec<f32>,
    pub grid: ObservationGrid,
}

impl UltrasoundImage {
    pub fn to_image(&self) -> Image {
        Image {
            width: self.grid.cols(),
            height: self.grid.rows(),
            data: self.pixels.clone(),
        }
    }
}

fn check_inputs(block: &Matrix, geometry: &ArrayGeometry, grid: &ObservationGrid) -> Result<()> {
    geometry.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("observation grid is empty".into()));
    }
    if block.rows() != geometry.mic_count() {
        return Err(Error::Shape(format!(
            "block has {} rows, array has {} microphones",
            block.rows(),
            geometry.mic_count()
        )));
    }
    Ok(())
}

fn cell_delays(geometry: &ArrayGeometry, grid: &ObservationGrid, idx: usize, fs: f64) -> Vec<f64> {
    let (az, pol) = grid.direction(idx);
    steering_delays(geometry, az, pol).into_iter().map(|d| d * fs).collect()
}

/// Sub-steps per integer lag in the precomputed fine correlation table.
const LAG_OVERSAMPLE: usize = 32;

/// Pairwise cross-correlations `R_mn[L] = (1/T) Σ_t x_m[t] x_n[t − L]` for
/// `m ≤ n` and `|L| ≤ max_lag`, plus each off-diagonal pair resampled onto a
/// lag grid `LAG_OVERSAMPLE` times finer with the sinc interpolator.
struct CrossCorrelations {
    max_lag: isize,
    mics: usize,
    /// Indexed by `pair_index(m, n) * (2 max_lag + 1) + (L + max_lag)`.
    values: Vec<f64>,
    /// Indexed by `pair_index(m, n) * fine_width + round((L + max_lag) * LAG_OVERSAMPLE)`.
    fine: Vec<f64>,
    fine_width: usize,
}

impl CrossCorrelations {
    fn compute(block: &Matrix, max_lag: isize, backend: Backend) -> Self {
        let mics = block.rows();
        let t = block.cols();
        let channels: Vec<Vec<f64>> = (0..mics)
            .map(|m| block.row(m).iter().map(|&v| v as f64).collect())
            .collect();
        let pairs: Vec<(usize, usize)> = (0..mics)
            .flat_map(|m| (m..mics).map(move |n| (m, n)))
            .collect();
        let width = (2 * max_lag + 1) as usize;
        let fine_width = (width - 1) * LAG_OVERSAMPLE + 2;
        let norm = 1.0 / t as f64;
        let fd = FractionalDelay::shared();
        let rows = backend.map_range(pairs.len(), |p| {
            let (m, n) = pairs[p];
            let (xm, xn) = (&channels[m], &channels[n]);
            let coarse: Vec<f64> = (0..width)
                .map(|k| {
                    let lag = k as isize - max_lag;
                    let lo = lag.max(0) as usize;
                    let hi = (t as isize + lag.min(0)) as usize;
                    if hi <= lo {
                        return 0.0;
                    }
                    let shift = (lo as isize - lag) as usize;
                    sum_product(&xm[lo..hi], &xn[shift..shift + (hi - lo)]) * norm
                })
                .collect();
            let fine: Vec<f64> = if m == n {
                Vec::new()
            } else {
                (0..fine_width)
                    .map(|i| fd.sample_f64(&coarse, i as f64 / LAG_OVERSAMPLE as f64))
                    .collect()
            };
            (coarse, fine)
        });
        let mut values = Vec::with_capacity(pairs.len() * width);
        let mut fine = vec![0.0; pairs.len() * fine_width];
        for (p, (c, f)) in rows.into_iter().enumerate() {
            values.extend(c);
            if !f.is_empty() {
                fine[p * fine_width..(p + 1) * fine_width].copy_from_slice(&f);
            }
        }
        CrossCorrelations {
            max_lag,
            mics,
            values,
            fine,
            fine_width,
        }
    }

    fn pair_index(&self, m: usize, n: usize) -> usize {
        // rows before m hold (mics - i) pairs each
        m * self.mics - m * m.saturating_sub(1) / 2 + (n - m)
    }

    /// Correlation of pair `(m, n)`, `m < n`, at fractional lag `tau`.
    fn at(&self, m: usize, n: usize, tau: f64) -> f64 {
        let row = &self.fine[self.pair_index(m, n) * self.fine_width..][..self.fine_width];
        let pos = ((tau + self.max_lag as f64) * LAG_OVERSAMPLE as f64).clamp(0.0, (self.fine_width - 2) as f64);
        let i = pos as usize;
        let a = pos - i as f64;
        row[i] + (row[i + 1] - row[i]) * a
    }

    fn zero_lag(&self, m: usize) -> f64 {
        let width = (2 * self.max_lag + 1) as usize;
        self.values[self.pair_index(m, m) * width + self.max_lag as usize]
    }
}

/// Delay-and-sum power map.
///
/// For each cell, `y(t) = Σ_m x_m(t − Δ_m)` and the stored value is the mean
/// of `y²` over the window. The mean power is evaluated through the identity
/// `mean y² = Σ_m Σ_n R_mn(Δ_n − Δ_m)`, with the pairwise correlations
/// computed once per block, resampled onto a fine lag grid through the shared
/// sinc interpolator, and read per cell by linear interpolation. [`das_map_direct`] forms `y(t)` literally and is the
/// reference this is checked against.
pub fn das_map(
    block: &Matrix,
    geometry: &ArrayGeometry,
    grid: &ObservationGrid,
    fs: f64,
    backend: Backend,
) -> Result<DirectionalHeatMap> {
    check_inputs(block, geometry, grid)?;
    let mics = block.rows();
    let max_delay = geometry.aperture() / geometry.speed_of_sound * fs;
    let max_lag = max_delay.ceil() as isize + TAPS as isize / 2 + 2;
    let xc = CrossCorrelations::compute(block, max_lag, backend);
    let diag: f64 = (0..mics).map(|m| xc.zero_lag(m)).sum();
    let values = backend.map_range(grid.len(), |idx| {
        let d = cell_delays(geometry, grid, idx, fs);
        let mut cross = 0.0;
        for m in 0..mics {
            for n in m + 1..mics {
                cross += xc.at(m, n, d[n] - d[m]);
            }
        }
        (diag + 2.0 * cross).max(0.0)
    });
    DirectionalHeatMap::new(values, grid.clone())
}

/// Literal delay-and-sum: every channel is shifted by its fractional steering
/// delay, the channels are summed, and the mean power of the sum is stored.
/// Cost is `cells × M × T × taps`; intended for verification and short blocks.
pub fn das_map_direct(
    block: &Matrix,
    geometry: &ArrayGeometry,
    grid: &ObservationGrid,
    fs: f64,
    backend: Backend,
) -> Result<DirectionalHeatMap> {
    check_inputs(block, geometry, grid)?;
    let fd = FractionalDelay::shared();
    let t = block.cols();
    let values = backend.map_range(grid.len(), |idx| {
        let d = cell_delays(geometry, grid, idx, fs);
        let mut y = vec![0.0f64; t];
        for (m, &dm) in d.iter().enumerate() {
            let row = block.row(m);
            for (s, ys) in y.iter_mut().enumerate() {
                *ys += fd.sample(row, s as f64 - dm);
            }
        }
        y.iter().map(|v| v * v).sum::<f64>() / t as f64
    });
    DirectionalHeatMap::new(values, grid.clone())
}

/// `H_us = H − k·H_ref` with `k = H(i*, j*) / H_ref(i*, j*)` at the reference
/// argmax. The anchor pixel is exactly zero; other pixels may be negative.
pub fn subtract_reference(
    map: &DirectionalHeatMap,
    reference: &DirectionalHeatMap,
) -> Result<DirectionalHeatMap> {
    if map.grid != reference.grid {
        return Err(Error::Shape("map and reference use different grids".into()));
    }
    if reference.values.iter().all(|&v| v == 0.0) {
        return Err(Error::Reference("reference map is identically zero".into()));
    }
    let anchor = reference.argmax();
    let k = map.values[anchor] / reference.values[anchor];
    if !k.is_finite() {
        return Err(Error::Reference(format!(
            "scale factor is not finite (reference peak {})",
            reference.values[anchor]
        )));
    }
    let mut values: Vec<f64> = map
        .values
        .iter()
        .zip(&reference.values)
        .map(|(h, r)| h - k * r)
        .collect();
    values[anchor] = 0.0;
    DirectionalHeatMap::new(values, map.grid.clone())
}

/// Clamps negatives to zero and divides by the maximum.
pub fn normalize(map: &DirectionalHeatMap) -> UltrasoundImage {
    let max = map.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let pixels = if max > 0.0 {
        map.values
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else { (v / max) as f32 })
            .collect()
    } else {
        vec![0.0; map.values.len()]
    };
    UltrasoundImage {
        pixels,
        grid: map.grid.clone(),
    }
}

/// How reference maps are matched with recording blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Block `i` is paired with reference block `i mod n_ref`.
    #[default]
    PerBlock,
    /// All reference blocks are averaged into a single map.
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub burst: BurstConfig,
    pub bandpass: BandpassSpec,
    pub gate: RangeGate,
    pub grid_resolution_deg: f64,
    pub reference_mode: ReferenceMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            burst: BurstConfig::default(),
            bandpass: BandpassSpec::default(),
            gate: RangeGate::default(),
            grid_resolution_deg: 1.0,
            reference_mode: ReferenceMode::PerBlock,
        }
    }
}

/// Recording → heat maps → ultrasound images.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub config: PipelineConfig,
    pub geometry: ArrayGeometry,
    pub grid: ObservationGrid,
    pub backend: Backend,
}

impl Preprocessor {
    pub fn new(config: PipelineConfig, geometry: ArrayGeometry, backend: Backend) -> Result<Self> {
        geometry.validate()?;
        config.burst.validate()?;
        let grid = ObservationGrid::new(config.grid_resolution_deg)?;
        Ok(Preprocessor {
            config,
            geometry,
            grid,
            backend,
        })
    }

    /// Band-pass, split, upsample and beamform every block of a recording.
    pub fn heat_maps(&self, recording: &MultichannelRecording) -> Result<Vec<DirectionalHeatMap>> {
        recording.validate()?;
        if recording.samples.rows() != self.geometry.mic_count() {
            return Err(Error::Shape(format!(
                "recording has {} channels, geometry {} microphones",
                recording.samples.rows(),
                self.geometry.mic_count()
            )));
        }
        let filtered = bandpass(recording, &self.config.bandpass, self.backend)?;
        let blocks = split_blocks(&filtered, &self.config.burst, &self.config.gate)?;
        let fs = recording.sample_rate_hz * UPSAMPLE_FACTOR as f64;
        blocks
            .iter()
            .map(|b| {
                let reflected = b.upsampled_reflected(self.backend)?;
                das_map(&reflected, &self.geometry, &self.grid, fs, self.backend)
            })
            .collect()
    }

    /// Reference maps as used by [`Preprocessor::images`].
    pub fn reference_maps(&self, reference: &MultichannelRecording) -> Result<Vec<DirectionalHeatMap>> {
        let maps = self.heat_maps(reference)?;
        Ok(match self.config.reference_mode {
            ReferenceMode::PerBlock => maps,
            ReferenceMode::Averaged => vec![DirectionalHeatMap::mean(&maps)?],
        })
    }

    pub fn images(
        &self,
        recording: &MultichannelRecording,
        reference_maps: &[DirectionalHeatMap],
    ) -> Result<Vec<UltrasoundImage>> {
        if reference_maps.is_empty() {
            return Err(Error::Reference("no reference maps".into()));
        }
        self.heat_maps(recording)?
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let r = &reference_maps[i % reference_maps.len()];
                Ok(normalize(&subtract_reference(h, r)?))
            })
            .collect()
    }
}

/// Full pipeline for a recording and a person-free reference recording.
pub fn make_ultrasound_image(
    recording: &MultichannelRecording,
    reference_recording: &MultichannelRecording,
    geometry: &ArrayGeometry,
    config: &PipelineConfig,
    backend: Backend,
) -> Result<Vec<UltrasoundImage>> {
    let pre = Preprocessor::new(config.clone(), geometry.clone(), backend)?;
    let refs = pre.reference_maps(reference_recording)?;
    pre.images(recording, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_is_dense() {
        let xc = CrossCorrelations {
            max_lag: 0,
            mics: 5,
            values: Vec::new(),
            fine: Vec::new(),
            fine_width: 0,
        };
        let mut seen = Vec::new();
        for m in 0..5 {
            for n in m..5 {
                seen.push(xc.pair_index(m, n));
            }
        }
        assert_eq!(seen, (0..15).collect::<Vec<_>>());
    }
}
