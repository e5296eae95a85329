//! Sequential / data-parallel execution switch.
//!
//! Every hot loop in the crate goes through [`Backend`]. With the `parallel`
//! feature enabled, [`Backend::Parallel`] dispatches to rayon; without it, both
//! variants run the same sequential code. Results are collected in index order
//! and each item is computed independently, so both backends produce
//! bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Sequential,
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Backend::Parallel
        } else {
            Backend::Sequential
        }
    }
}

impl Backend {
    /// Evaluates `f(i)` for `i in 0..n` and returns the results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Applies `f(row_index, row)` to each `width`-long chunk of `data`.
    pub fn for_each_row<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => data
                .par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
            _ => data
                .chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Backend::Parallel
    }
}

/// Caps the global rayon pool. A no-op without the `parallel` feature or when
/// the pool was already initialized.
pub fn set_thread_count(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backends_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Backend::Sequential.map_range(1000, f);
        let b = Backend::Parallel.map_range(1000, f);
        assert_eq!(a, b);

        let mut x = vec![0usize; 60];
        let mut y = x.clone();
        Backend::Sequential.for_each_row(&mut x, 6, |i, r| r.iter_mut().for_each(|v| *v = i));
        Backend::Parallel.for_each_row(&mut y, 6, |i, r| r.iter_mut().for_each(|v| *v = i));
        assert_eq!(x, y);
        assert_eq!(x[59], 9);
    }
}
