//! Raster figures written as PGM: IoU histograms and prediction grids.

use echoseg_core::{Image, Mask};

pub const BINS: usize = 100;
pub const BIN_WIDTH: f64 = 1.0 / BINS as f64;
const BAR_PX: usize = 4;
const PLOT_PX: usize = 150;
const AXIS_PX: usize = 2;
const GAP_PX: usize = 2;
const TILE_MIN_PX: usize = 96;

/// Counts per bin over `[0, 1]`. Values within 1e-9 below a bin edge are
/// counted in the upper bin so that e.g. 0.29 lands in bin 29; 1.0 goes to
/// the last bin.
pub fn histogram(values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; BINS];
    for &v in values {
        let bin = ((v.clamp(0.0, 1.0) * BINS as f64 + 1e-9).floor() as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    counts
}

/// Dark bars on white, one `BAR_PX`-wide column per bin, heights relative
/// to the fullest bin, over a dark axis line.
pub fn histogram_image(counts: &[usize]) -> Image {
    let width = counts.len() * BAR_PX;
    let height = PLOT_PX + AXIS_PX;
    let mut data = vec![1.0f32; width * height];
    let peak = counts.iter().copied().max().unwrap_or(0).max(1);
    for (b, &c) in counts.iter().enumerate() {
        let bar = (c * PLOT_PX).div_ceil(peak);
        for y in PLOT_PX - bar..PLOT_PX {
            // leave one light column between bars
            for x in b * BAR_PX..(b + 1) * BAR_PX - 1 {
                data[y * width + x] = 0.15;
            }
        }
    }
    for y in PLOT_PX..height {
        data[y * width..(y + 1) * width].fill(0.0);
    }
    Image {
        width,
        height,
        data,
    }
}

fn upscale(img: &Image, factor: usize) -> Image {
    let (w, h) = (img.width * factor, img.height * factor);
    let data = (0..w * h)
        .map(|i| img.data[(i / w / factor) * img.width + (i % w) / factor])
        .collect();
    Image { width: w, height: h, data }
}

/// Rows of `[ultrasound image, ground truth, prediction]`, each tile
/// enlarged by an integer factor, separated by mid-grey gaps.
pub fn prediction_grid(rows: &[(Image, Mask, Mask)]) -> Image {
    let Some((first, _, _)) = rows.first() else {
        return Image::zeros(0, 0);
    };
    let factor = TILE_MIN_PX.div_ceil(first.width.max(1)).max(1);
    let (tw, th) = (first.width * factor, first.height * factor);
    let width = 3 * tw + 4 * GAP_PX;
    let height = rows.len() * th + (rows.len() + 1) * GAP_PX;
    let mut data = vec![0.5f32; width * height];
    for (r, (img, truth, pred)) in rows.iter().enumerate() {
        let tiles = [img.clone(), truth.to_image(), pred.to_image()];
        for (c, tile) in tiles.iter().enumerate() {
            let big = upscale(tile, factor);
            let (x0, y0) = (GAP_PX + c * (tw + GAP_PX), GAP_PX + r * (th + GAP_PX));
            for y in 0..big.height.min(th) {
                let dst = (y0 + y) * width + x0;
                let n = big.width.min(tw);
                data[dst..dst + n].copy_from_slice(&big.data[y * big.width..y * big.width + n]);
            }
        }
    }
    Image { width, height, data }
}
