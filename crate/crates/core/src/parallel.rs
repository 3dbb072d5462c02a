//! Data-parallel map over indices with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it every request runs on the calling thread. Results always come
//! back in index order, so callers reduce deterministically.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon pool; `workers = None` uses the global pool.
    Threads {
        workers: Option<usize>,
    },
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Threads { workers: None }
        } else {
            Parallelism::Sequential
        }
    }
}

/// `(0..n).map(f)` under the requested parallelism, in index order.
pub fn map_indexed<T, F>(n: usize, parallelism: Parallelism, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match parallelism {
        Parallelism::Sequential => Ok((0..n).map(f).collect()),
        Parallelism::Threads { workers } => threaded(n, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn threaded<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    match workers {
        None => Ok(run()),
        Some(0) => Err(Error::Config("worker count must be positive".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a {w}-thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn threaded<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == Some(0) {
        return Err(Error::Config("worker count must be positive".into()));
    }
    log::debug!("built without the parallel feature; running sequentially");
    Ok((0..n).map(f).collect())
}
