//! Array geometry and direction conventions.
//!
//! The microphone array lies in the x-y plane and looks along +z. A direction
//! is given by azimuth θ (horizontal, rotation about y) and polar angle φ
//! (vertical elevation), both in degrees:
//! `u(θ, φ) = (cos φ sin θ, sin φ, cos φ cos θ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_MIC_PITCH_M: f64 = 3.25e-3;
pub const DEFAULT_TRANSDUCER_OFFSET_M: f64 = 0.030;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<Point3>,
    pub transducer_position: Point3,
    pub speed_of_sound: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::grid(4, 4, DEFAULT_MIC_PITCH_M, DEFAULT_TRANSDUCER_OFFSET_M)
    }
}

impl ArrayGeometry {
    /// A centered `nx × ny` planar grid with the transducer `offset` below it.
    pub fn grid(nx: usize, ny: usize, pitch: f64, offset: f64) -> Self {
        let cx = (nx as f64 - 1.0) / 2.0;
        let cy = (ny as f64 - 1.0) / 2.0;
        let mut mic_positions = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                mic_positions.push([(ix as f64 - cx) * pitch, (iy as f64 - cy) * pitch, 0.0]);
            }
        }
        ArrayGeometry {
            mic_positions,
            transducer_position: [0.0, -offset, 0.0],
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::Config("array needs at least one microphone".into()));
        }
        let finite = |p: &Point3| p.iter().all(|v| v.is_finite());
        if !self.mic_positions.iter().all(finite) || !finite(&self.transducer_position) {
            return Err(Error::Config("array positions must be finite".into()));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::Config(format!(
                "speed of sound must be positive, got {}",
                self.speed_of_sound
            )));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.mic_positions.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for (acc, v) in c.iter_mut().zip(p) {
                *acc += v;
            }
        }
        c.map(|v| v / n)
    }

    /// Largest distance between any two microphones.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.mic_positions.iter().enumerate() {
            for b in &self.mic_positions[i + 1..] {
                best = best.max(distance(a, b));
            }
        }
        best
    }
}

pub fn unit_direction(azimuth_deg: f64, polar_deg: f64) -> Point3 {
    let (st, ct) = azimuth_deg.to_radians().sin_cos();
    let (sp, cp) = polar_deg.to_radians().sin_cos();
    [cp * st, sp, cp * ct]
}

/// Great-circle angle between two directions, in degrees.
pub fn angular_separation_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let ua = unit_direction(a.0, a.1);
    let ub = unit_direction(b.0, b.1);
    dot(&ua, &ub).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_array_is_centered_4x4() {
        let g = ArrayGeometry::default();
        assert_eq!(g.mic_count(), 16);
        let c = g.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-15));
        assert!((g.aperture() - 3.0 * DEFAULT_MIC_PITCH_M * 2f64.sqrt()).abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn direction_conventions() {
        assert_eq!(unit_direction(0.0, 0.0), [0.0, 0.0, 1.0]);
        let u = unit_direction(90.0, 0.0);
        assert!((u[0] - 1.0).abs() < 1e-12);
        let u = unit_direction(0.0, 90.0);
        assert!((u[1] - 1.0).abs() < 1e-12);
        assert!((angular_separation_deg((10.0, 0.0), (0.0, 0.0)) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut g = ArrayGeometry::default();
        g.speed_of_sound = 0.0;
        assert!(g.validate().is_err());
        g = ArrayGeometry::default();
        g.mic_positions.clear();
        assert!(g.validate().is_err());
        g = ArrayGeometry::default();
        g.mic_positions[0][1] = f64::NAN;
        assert!(g.validate().is_err());
    }
}
