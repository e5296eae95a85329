//! Plain 2-D rasters used after beamforming: float images and binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major single-channel float image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let src = |v: usize, scale: f64, n: usize| -> (usize, usize, f64) {
            let p = ((v as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, fy) = src(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = src(x, sx, self.width);
                let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
                let bot = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
                data.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
        Image { width, height, data }
    }

    /// Box-filter downscale by an integer factor.
    pub fn downscale_area(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Shape(format!(
                "cannot downscale {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = (factor * factor) as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += self.get(x * factor + dx, y * factor + dy) as f64;
                    }
                }
                data.push((acc / norm) as f32);
            }
        }
        Ok(Image { width: w, height: h, data })
    }
}

/// Row-major binary mask (values 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Format("mask values must be 0 or 1".into()));
        }
        Ok(Mask { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Thresholds a float image at `threshold` (inclusive).
    pub fn from_image(img: &Image, threshold: f32) -> Mask {
        Mask {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }

    /// Resizes via bilinear interpolation of the 0/1 field, re-thresholded at 0.5.
    pub fn resize(&self, width: usize, height: usize) -> Mask {
        Mask::from_image(&self.to_image().resize_bilinear(width, height), 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_preserves_constants() {
        let img = Image::new(3, 2, vec![0.25; 6]).unwrap();
        let up = img.resize_bilinear(7, 5);
        assert!(up.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let down = Image::new(4, 4, (0..16).map(|v| v as f32).collect())
            .unwrap()
            .downscale_area(2)
            .unwrap();
        assert_eq!(down.data, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(2, 1, vec![0, 2]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1]).is_err());
        let m = Mask::new(2, 1, vec![1, 0]).unwrap();
        assert_eq!(m.count(), 1);
    }
}
