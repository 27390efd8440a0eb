//! Data-parallel execution with a sequential fallback.
//!
//! Every batch loop in the crate (covariance accumulation, per-image feature
//! extraction, nearest-neighbour search, sweep points) goes through [`Exec`].
//! With the `parallel` feature enabled, [`Exec::Parallel`] maps items on the
//! rayon pool; without it, both variants run on the calling thread.
//!
//! Results are always collected in input order and any reduction is done
//! sequentially by the caller, so outputs are bit-identical across modes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True only when rayon is compiled in and this mode asks for it.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Runs `op` inside a pool bounded to `workers` threads.
    ///
    /// `None` (or a sequential mode) runs `op` directly on the current pool.
    pub fn with_workers<R, F>(self, workers: Option<usize>, op: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        #[cfg(feature = "parallel")]
        if let (Exec::Parallel, Some(n)) = (self, workers) {
            match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                Ok(pool) => return pool.install(op),
                Err(e) => log::warn!("could not build a {n}-thread pool ({e}); using the global pool"),
            }
        }
        let _ = workers;
        op()
    }
}
