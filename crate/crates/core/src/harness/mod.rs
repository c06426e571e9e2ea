//! Synthetic scenes, ICP registration and dataset assembly for end-to-end runs.

pub mod config;
pub mod dataset;
pub mod icp;
pub mod pipeline;
pub mod scene;

use rayon::prelude::*;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MISALIGN_THREADS";

/// Worker count from `MISALIGN_THREADS`, or `None` for the rayon default.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse::<usize>().ok().filter(|&n| n > 0)
}

/// Maps `f` over `items` in parallel, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
