//! Execution strategy for replicate-parallel loops.
//!
//! Bootstrap replicates and simulated datasets are embarrassingly parallel
//! and fully deterministic (each one seeds its own RNG from the run seed and
//! its index), so the only scheduling decision is how many threads to use.

/// Thread-count preference for bootstrap engines and the coverage harness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// `None` uses the default rayon pool (or a sequential loop when the
    /// `parallel` feature is disabled). `Some(1)` always runs sequentially;
    /// `Some(k)` runs on a dedicated pool of `k` threads.
    pub threads: Option<usize>,
}

impl ExecOptions {
    /// Force sequential execution regardless of the enabled features.
    pub fn sequential() -> Self {
        ExecOptions { threads: Some(1) }
    }

    /// Use `k` worker threads (requires the `parallel` feature to matter).
    pub fn with_threads(k: usize) -> Self {
        ExecOptions { threads: Some(k) }
    }
}

/// Map `0..count` through `f`, collecting results in index order.
///
/// The output is identical for every thread count because `f` must derive
/// all randomness from its index argument.
#[cfg(feature = "parallel")]
pub(crate) fn map_indices<T, F>(count: usize, opts: ExecOptions, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match opts.threads {
        Some(1) => (0..count).map(f).collect(),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .expect("failed to build rayon thread pool");
            pool.install(|| (0..count).into_par_iter().map(f).collect())
        }
        None => (0..count).into_par_iter().map(f).collect(),
    }
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<T, F>(count: usize, _opts: ExecOptions, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}
