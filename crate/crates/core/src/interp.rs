//! Windowed-sinc fractional-delay interpolation shared by the echo simulator
//! and the beamformer, so both sides use one delay model.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Number of taps of the interpolator.
pub const TAPS: usize = 31;
const HALF: isize = (TAPS as isize) / 2;
/// Support of the windowed kernel is `(-SUPPORT, SUPPORT)` samples.
const SUPPORT: f64 = HALF as f64 + 1.0;
const TABLE_STEPS: usize = 2048;

/// Tabulated Blackman-windowed sinc with linear lookup.
#[derive(Debug, Clone)]
pub struct FractionalDelay {
    table: Vec<f64>,
}

impl Default for FractionalDelay {
    fn default() -> Self {
        Self::new()
    }
}

impl FractionalDelay {
    pub fn new() -> Self {
        let n = (SUPPORT as usize) * TABLE_STEPS;
        let table = (0..=n + 1)
            .map(|i| exact_kernel(i as f64 / TABLE_STEPS as f64))
            .collect();
        FractionalDelay { table }
    }

    /// Process-wide instance; the table is built once.
    pub fn shared() -> &'static FractionalDelay {
        static SHARED: OnceLock<FractionalDelay> = OnceLock::new();
        SHARED.get_or_init(FractionalDelay::new)
    }

    /// Kernel value at offset `x` samples.
    #[inline]
    pub fn kernel(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax >= SUPPORT {
            return 0.0;
        }
        let pos = ax * TABLE_STEPS as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        self.table[i] + (self.table[i + 1] - self.table[i]) * frac
    }

    /// Interpolation weights for reading a signal at continuous index `pos`.
    /// Returns the index of the first tap and the `TAPS` weights.
    #[inline]
    pub fn weights(&self, pos: f64) -> (isize, [f64; TAPS]) {
        let base = pos.floor();
        let frac = pos - base;
        let first = base as isize - HALF;
        let mut w = [0.0; TAPS];
        if frac == 0.0 {
            w[HALF as usize] = 1.0;
            return (first, w);
        }
        // Same linear table lookup as `kernel`, with the indices walked
        // directly: taps left of the read point sit at `frac + j`, taps to
        // the right at `j - frac`.
        let p = frac * TABLE_STEPS as f64;
        let i0 = p as usize;
        let a = p - i0 as f64;
        let t = &self.table;
        for j in 0..=HALF as usize {
            let idx = i0 + j * TABLE_STEPS;
            w[HALF as usize - j] = t[idx] + (t[idx + 1] - t[idx]) * a;
        }
        for j in 1..=HALF as usize {
            // |x| = j - frac lies between table steps j*STEPS - i0 - 1 and j*STEPS - i0.
            let idx = j * TABLE_STEPS - i0 - 1;
            w[HALF as usize + j] = t[idx] + (t[idx + 1] - t[idx]) * (1.0 - a);
        }
        (first, w)
    }

    /// Value of `signal` at continuous index `pos`, zero outside the buffer.
    #[inline]
    pub fn sample<T: Copy + Into<f64>>(&self, signal: &[T], pos: f64) -> f64 {
        let (first, w) = self.weights(pos);
        let n = signal.len() as isize;
        if first >= 0 && first + TAPS as isize <= n {
            let s = &signal[first as usize..first as usize + TAPS];
            return s.iter().zip(&w).map(|(&v, &wk)| v.into() * wk).sum();
        }
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let idx = first + k as isize;
            if (0..n).contains(&idx) {
                acc += signal[idx as usize].into() * wk;
            }
        }
        acc
    }

    /// [`sample`](Self::sample) specialised to `f64` buffers.
    #[inline]
    pub fn sample_f64(&self, signal: &[f64], pos: f64) -> f64 {
        let (first, w) = self.weights(pos);
        if first >= 0 && first as usize + TAPS <= signal.len() {
            return sum_product(&signal[first as usize..first as usize + TAPS], &w);
        }
        self.sample(signal, pos)
    }
}

/// Dot product with four interleaved accumulators so the loop vectorizes.
#[inline]
pub fn sum_product(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Direct evaluation of the windowed sinc, used to build the table.
pub fn exact_kernel(x: f64) -> f64 {
    if x.abs() >= SUPPORT {
        return 0.0;
    }
    let sinc = if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    let t = PI * x / SUPPORT;
    let window = 0.42 + 0.5 * t.cos() + 0.08 * (2.0 * t).cos();
    sinc * window
}
