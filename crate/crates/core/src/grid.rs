use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AZIMUTH_LIMIT_DEG: f64 = 45.0;
pub const POLAR_LIMIT_DEG: f64 = 60.0;

/// Observation directions: azimuth spans [-45, 45] (columns), polar spans
/// [-60, 60] (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationGrid {
    pub azimuth_deg: Vec<f64>,
    pub polar_deg: Vec<f64>,
    pub resolution_deg: f64,
}

impl Default for ObservationGrid {
    fn default() -> Self {
        Self::new(1.0).expect("1 degree grid is valid")
    }
}

impl ObservationGrid {
    pub fn new(resolution_deg: f64) -> Result<Self> {
        if !(resolution_deg.is_finite() && resolution_deg > 0.0) {
            return Err(Error::Config(format!(
                "grid resolution must be positive, got {resolution_deg}"
            )));
        }
        let axis = |limit: f64| -> Result<Vec<f64>> {
            let steps = 2.0 * limit / resolution_deg;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "resolution {resolution_deg} does not divide [-{limit}, {limit}]"
                )));
            }
            let n = steps.round() as usize;
            Ok((0..=n).map(|i| -limit + i as f64 * resolution_deg).collect())
        };
        Ok(ObservationGrid {
            azimuth_deg: axis(AZIMUTH_LIMIT_DEG)?,
            polar_deg: axis(POLAR_LIMIT_DEG)?,
            resolution_deg,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let check = |axis: &[f64], limit: f64, name: &str| -> Result<()> {
            if axis.is_empty() {
                return Err(Error::Config(format!("{name} axis is empty")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!("{name} axis not strictly increasing")));
            }
            if axis[0] != -limit || axis[axis.len() - 1] != limit {
                return Err(Error::Config(format!("{name} axis must span [-{limit}, {limit}]")));
            }
            Ok(())
        };
        check(&self.azimuth_deg, AZIMUTH_LIMIT_DEG, "azimuth")?;
        check(&self.polar_deg, POLAR_LIMIT_DEG, "polar")
    }

    pub fn rows(&self) -> usize {
        self.polar_deg.len()
    }

    pub fn cols(&self) -> usize {
        self.azimuth_deg.len()
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(azimuth, polar)` of the cell at row-major index `idx`.
    pub fn direction(&self, idx: usize) -> (f64, f64) {
        let (r, c) = (idx / self.cols(), idx % self.cols());
        (self.azimuth_deg[c], self.polar_deg[r])
    }

    /// Nearest `(row, col)` to a direction, clamped to the grid.
    pub fn nearest(&self, azimuth_deg: f64, polar_deg: f64) -> (usize, usize) {
        (nearest_index(&self.polar_deg, polar_deg), nearest_index(&self.azimuth_deg, azimuth_deg))
    }
}

fn nearest_index(axis: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, a) in axis.iter().enumerate() {
        if (a - v).abs() < (axis[best] - v).abs() {
            best = i;
        }
    }
    best
}
