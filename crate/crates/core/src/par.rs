//! Execution strategy for independent Monte Carlo work units.
//!
//! Every work unit is keyed by its index and the output vector is always
//! in index order, so sequential and parallel runs give identical results.

/// How independent work units are scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled,
    /// otherwise falls back to sequential.
    #[default]
    Parallel,
}

/// Evaluates `f(0..len)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..len).map(f).collect(),
        Execution::Parallel => parallel_map(len, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

/// Whether `Execution::Parallel` actually runs on a thread pool in this build.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
