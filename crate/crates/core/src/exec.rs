//! Execution strategy for the data-parallel kernels.
//!
//! Everything that touches every grid point (phase kernels, observable
//! reductions) or every member of a batch (independent trajectories,
//! back-propagations) goes through [`Execution`]. With the `parallel` feature
//! the work is spread over the rayon pool; without it, or when
//! [`Execution::Sequential`] is requested, the same code runs on one thread.
//!
//! Reductions are always split into fixed [`CHUNK`]-sized partial sums that
//! are then added in order, so both strategies produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Partial-sum block length for deterministic reductions.
pub const CHUNK: usize = 2048;

/// Below this many elements the parallel path falls back to sequential.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when compiled with the `parallel` feature, sequential otherwise.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Applies `f(i, &mut data[i])` to every element.
    pub fn for_each_indexed<T, F>(self, data: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && data.len() >= PAR_THRESHOLD {
            data.par_chunks_mut(CHUNK)
                .enumerate()
                .for_each(|(c, chunk)| {
                    let base = c * CHUNK;
                    for (j, x) in chunk.iter_mut().enumerate() {
                        f(base + j, x);
                    }
                });
            return;
        }
        for (i, x) in data.iter_mut().enumerate() {
            f(i, x);
        }
    }

    /// Deterministic sum of `f(i)` for `i in 0..n`.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| -> f64 {
            let hi = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..hi).map(&f).sum()
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n >= PAR_THRESHOLD {
            let parts: Vec<f64> = (0..n_chunks).into_par_iter().map(partial).collect();
            return parts.into_iter().sum();
        }
        (0..n_chunks).map(partial).sum()
    }

    /// Deterministic maximum of `f(i)`; returns 0 for `n == 0`.
    pub fn max<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n >= PAR_THRESHOLD {
            return (0..n).into_par_iter().map(f).reduce(|| 0.0, f64::max);
        }
        (0..n).map(f).fold(0.0, f64::max)
    }

    /// Maps a batch of independent inputs, preserving order.
    pub fn map<I, O, F>(self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() > 1 {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Like [`Execution::map`] but consumes the inputs.
    pub fn map_owned<I, O, F>(self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() > 1 {
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}
