//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (on by default) independent work items run on
//! a rayon pool. `SOFTBOUND_THREADS` caps the pool size; `0` or unset lets
//! rayon decide. Without the feature every map runs on the calling thread.
//! Results are always returned in item order, so output never depends on
//! scheduling.

/// How a batch of independent items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
}

pub const THREADS_ENV: &str = "SOFTBOUND_THREADS";

/// Thread cap from `SOFTBOUND_THREADS`; `None` means no cap.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// `(0..n).map(f)` collected in order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => parallel_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    match thread_cap() {
        Some(1) => (0..n).map(&f).collect(),
        Some(cap) => match rayon::ThreadPoolBuilder::new().num_threads(cap).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
