//! Data-parallel mapping with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over rayon; without
//! it every call runs on the calling thread. Output order always matches
//! input order, so results are identical either way.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// `Parallel` when compiled with rayon support, else `Sequential`.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `items` in input order. CPU-bound work uses rayon's global
/// pool.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Like [`map`] but on a dedicated pool of `workers` threads, for blocking
/// I/O such as backend requests where the pool size should follow the
/// backend's concurrency limit rather than the CPU count.
pub fn map_blocking<T, R, F>(exec: Execution, workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel && workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => log::warn!("cannot build worker pool, running sequentially: {e}"),
        }
    }
    let _ = (exec, workers);
    items.iter().map(f).collect()
}
