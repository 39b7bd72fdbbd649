//! Deterministic fan-out over independent work items.
//!
//! Experiments are embarrassingly parallel across seeds and probes. The
//! helpers here run a pure function over an index range and return results
//! in index order, so output files do not depend on scheduling. With the
//! `parallel` feature (default) the work runs on a rayon pool; without it,
//! the same call compiles to a plain sequential loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Worker-count knob: 0 picks the global pool default, 1 forces a
/// sequential loop, anything else builds a bounded pool.
pub fn run_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        match workers {
            1 => run_indexed_seq(n, f),
            0 => (0..n).into_par_iter().map(f).collect(),
            k => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
                Err(_) => run_indexed_seq(n, f),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        run_indexed_seq(n, f)
    }
}

/// Sequential reference path; always available so benchmarks can compare
/// both executors under one build.
pub fn run_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
