//! Data-parallel map helpers. Results are collected in index order before
//! reduction, so parallel and sequential execution produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStrategy {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecStrategy {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecStrategy::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecStrategy::Sequential
    }
}

/// Apply `f` to 0..n and collect the results in index order.
pub fn map_collect<T, F>(n: usize, strategy: ExecStrategy, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match strategy {
        ExecStrategy::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecStrategy::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}
