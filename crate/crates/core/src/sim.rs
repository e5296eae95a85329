//! Synthetic multichannel echo recordings and ground-truth masks.
//!
//! Propagation model: each point reflector returns a copy of the emitted burst
//! delayed by the transducer→reflector→microphone path length and scaled by
//! `reflectivity / path²`. The direct transducer→microphone path is rendered
//! with the same inverse-square law. Sub-sample delays go through the shared
//! windowed-sinc interpolator.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, unit_direction, ArrayGeometry, Point3};
use crate::grid::{ObservationGrid, AZIMUTH_LIMIT_DEG, POLAR_LIMIT_DEG};
use crate::image::Mask;
use crate::interp::FractionalDelay;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurstWindow {
    #[default]
    Rectangular,
    RaisedCosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstConfig {
    pub carrier_hz: f64,
    pub cycles: u32,
    pub interval_s: f64,
    pub sample_rate_hz: f64,
    pub window: BurstWindow,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig {
            carrier_hz: 62_000.0,
            cycles: 20,
            interval_s: 0.050,
            sample_rate_hz: 192_000.0,
            window: BurstWindow::Rectangular,
        }
    }
}

impl BurstConfig {
    pub fn burst_len(&self) -> usize {
        (self.cycles as f64 / self.carrier_hz * self.sample_rate_hz).round() as usize
    }

    pub fn interval_len(&self) -> usize {
        (self.interval_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::Config(format!(
                "carrier {} Hz must lie in (0, fs/2 = {} Hz)",
                self.carrier_hz,
                self.sample_rate_hz / 2.0
            )));
        }
        if self.cycles < 1 {
            return Err(Error::Config("burst needs at least one cycle".into()));
        }
        if !(self.interval_s > 0.0) || self.interval_len() < self.burst_len() {
            return Err(Error::Config(format!(
                "interval of {} samples is shorter than the {}-sample burst",
                self.interval_len(),
                self.burst_len()
            )));
        }
        Ok(())
    }
}

/// Reflector center in array-relative spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub range_m: f64,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
}

impl Position {
    pub fn cartesian(&self) -> Point3 {
        unit_direction(self.azimuth_deg, self.polar_deg).map(|v| v * self.range_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub center: Position,
    #[serde(default)]
    pub extent_deg: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub reflectors: Vec<Reflector>,
    #[serde(default)]
    pub noise_rms: f64,
    #[serde(default)]
    pub static_background: Vec<Reflector>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.reflectors.iter().chain(&self.static_background).enumerate() {
            let c = &r.center;
            let bad = |what: &str| Err(Error::Scene(format!("reflector {i}: {what}")));
            if !(c.range_m.is_finite() && c.range_m > 0.0) {
                return bad("range must be positive");
            }
            if !(-AZIMUTH_LIMIT_DEG..=AZIMUTH_LIMIT_DEG).contains(&c.azimuth_deg) {
                return bad("azimuth outside [-45, 45]");
            }
            if !(-POLAR_LIMIT_DEG..=POLAR_LIMIT_DEG).contains(&c.polar_deg) {
                return bad("polar angle outside [-60, 60]");
            }
            if !(0.0..=1.0).contains(&r.reflectivity) {
                return bad("reflectivity outside [0, 1]");
            }
            if !(r.extent_deg.is_finite() && r.extent_deg >= 0.0) {
                return bad("extent must be non-negative");
            }
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return Err(Error::Scene("noise_rms must be non-negative".into()));
        }
        Ok(())
    }

    pub fn all_reflectors(&self) -> impl Iterator<Item = &Reflector> {
        self.reflectors.iter().chain(&self.static_background)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultichannelRecording {
    pub samples: Matrix,
    pub sample_rate_hz: f64,
    pub geometry: ArrayGeometry,
}

impl MultichannelRecording {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.samples.cols() == 0 {
            return Err(Error::Shape("recording has no samples".into()));
        }
        if self.samples.rows() != self.geometry.mic_count() {
            return Err(Error::Shape(format!(
                "{} channels but geometry has {} microphones",
                self.samples.rows(),
                self.geometry.mic_count()
            )));
        }
        if !self.samples.is_finite() {
            return Err(Error::Format("recording contains non-finite samples".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.cols() == 0
    }
}

/// One emitted burst: `cycles` carrier periods, zero outside, peak amplitude 1.
pub fn synthesize_burst(config: &BurstConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.burst_len();
    let w = 2.0 * PI * config.carrier_hz / config.sample_rate_hz;
    let mut burst: Vec<f64> = (0..n)
        .map(|i| {
            let taper = match config.window {
                BurstWindow::Rectangular => 1.0,
                BurstWindow::RaisedCosine => {
                    0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos()
                }
            };
            taper * (w * i as f64).sin()
        })
        .collect();
    let peak = burst.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        burst.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(burst)
}

/// Path length transducer → reflector → microphone, per microphone.
pub fn echo_paths(geometry: &ArrayGeometry, position: &Position) -> Vec<f64> {
    let p = position.cartesian();
    let outbound = geometry::distance(&geometry.transducer_position, &p);
    geometry
        .mic_positions
        .iter()
        .map(|m| outbound + geometry::distance(&p, m))
        .collect()
}

/// Which contributions [`render_components`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub direct: bool,
    pub reflectors: bool,
    pub noise: bool,
}

impl Components {
    pub const ALL: Components = Components {
        direct: true,
        reflectors: true,
        noise: true,
    };
}

/// Renders a single burst interval.
pub fn render_scene(
    scene: &Scene,
    geometry: &ArrayGeometry,
    config: &BurstConfig,
    seed: u64,
) -> Result<MultichannelRecording> {
    render_bursts(scene, geometry, config, 1, seed)
}

/// Renders `bursts` consecutive burst intervals of a static scene.
pub fn render_bursts(
    scene: &Scene,
    geometry: &ArrayGeometry,
    config: &BurstConfig,
    bursts: usize,
    seed: u64,
) -> Result<MultichannelRecording> {
    render_components(scene, geometry, config, bursts, seed, Components::ALL)
}

pub fn render_components(
    scene: &Scene,
    geometry: &ArrayGeometry,
    config: &BurstConfig,
    bursts: usize,
    seed: u64,
    parts: Components,
) -> Result<MultichannelRecording> {
    scene.validate()?;
    geometry.validate()?;
    let burst = synthesize_burst(config)?;
    if bursts == 0 {
        return Err(Error::Config("at least one burst must be rendered".into()));
    }
    let fs = config.sample_rate_hz;
    let c = geometry.speed_of_sound;
    let interval = config.interval_len();
    let burst_s = burst.len() as f64 / fs;

    // (per-mic delay in samples, per-mic amplitude) for each arrival
    let mut arrivals: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    if parts.direct {
        let d: Vec<f64> = geometry
            .mic_positions
            .iter()
            .map(|m| geometry::distance(&geometry.transducer_position, m))
            .collect();
        if d.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("transducer coincides with a microphone".into()));
        }
        arrivals.push((
            d.iter().map(|v| v / c * fs).collect(),
            d.iter().map(|v| 1.0 / (v * v)).collect(),
        ));
    }
    for (i, r) in scene.all_reflectors().enumerate() {
        let paths = echo_paths(geometry, &r.center);
        let latest = paths.iter().fold(0.0f64, |m, &v| m.max(v)) / c;
        if latest + burst_s > config.interval_s {
            return Err(Error::Scene(format!(
                "reflector {i} echo ends at {:.2} ms, beyond the {:.2} ms burst interval",
                (latest + burst_s) * 1e3,
                config.interval_s * 1e3
            )));
        }
        if parts.reflectors {
            arrivals.push((
                paths.iter().map(|v| v / c * fs).collect(),
                paths.iter().map(|v| r.reflectivity / (v * v)).collect(),
            ));
        }
    }

    let m = geometry.mic_count();
    let total = interval * bursts;
    let mut acc = vec![0.0f64; m * total];
    let fd = FractionalDelay::shared();
    let support = crate::interp::TAPS as isize / 2 + 1;
    for b in 0..bursts {
        let emit = (b * interval) as f64;
        for (delays, amps) in &arrivals {
            for mic in 0..m {
                let row = &mut acc[mic * total..(mic + 1) * total];
                let start = emit + delays[mic];
                // out[t] = a * burst(t - start), read through the interpolator
                let lo = (start.floor() as isize - support).max(0);
                let hi = ((start + burst.len() as f64).ceil() as isize + support).min(total as isize);
                for t in lo..hi {
                    row[t as usize] += amps[mic] * fd.sample(&burst, t as f64 - start);
                }
            }
        }
    }

    if parts.noise && scene.noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scene.noise_rms)
            .map_err(|e| Error::Scene(format!("noise distribution: {e}")))?;
        acc.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }

    Ok(MultichannelRecording {
        samples: Matrix::from_vec(m, total, acc.into_iter().map(|v| v as f32).collect())?,
        sample_rate_hz: fs,
        geometry: geometry.clone(),
    })
}

/// Ground-truth mask on the observation grid (rows = polar, cols = azimuth).
/// A cell is set when its direction lies within `extent_deg` of a
/// non-background reflector center; each center's nearest cell is always set.
pub fn render_mask(scene: &Scene, grid: &ObservationGrid) -> Mask {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut mask = Mask::zeros(cols, rows);
    for r in &scene.reflectors {
        let center = (r.center.azimuth_deg, r.center.polar_deg);
        let cu = unit_direction(center.0, center.1);
        let cos_extent = r.extent_deg.to_radians().cos();
        for idx in 0..rows * cols {
            let (az, pol) = grid.direction(idx);
            if r.extent_deg > 0.0 && geometry::dot(&unit_direction(az, pol), &cu) >= cos_extent {
                mask.data[idx] = 1;
            }
        }
        let (ri, ci) = grid.nearest(center.0, center.1);
        mask.data[ri * cols + ci] = 1;
    }
    mask
}
