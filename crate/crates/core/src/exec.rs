//! Execution strategy for the data-parallel inner loops.
//!
//! Every parallel loop in this crate maps independent indices to independent
//! output slots; no cross-worker reductions are performed, so results are
//! bit-identical regardless of worker count or strategy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to run an index-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Plain sequential loop. Always available.
    Sequential,
    /// Rayon work-stealing pool. Requires the `parallel` feature.
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_collect<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Fallible variant of [`map_collect`]; the first error wins.
pub fn try_map_collect<T, E, F>(n: usize, mode: Parallelism, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_default_agree() {
        let a = map_collect(100, Parallelism::Sequential, |i| (i as f64).sqrt().sin());
        let b = map_collect(100, Parallelism::default(), |i| (i as f64).sqrt().sin());
        assert_eq!(a, b);
    }
}
