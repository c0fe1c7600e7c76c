//! Data-parallel map helper with a sequential fallback.
//!
//! Results are collected in index order, so output bytes do not depend on
//! thread count or scheduling. Reductions that would reorder floating-point
//! additions are kept out of this module on purpose: callers combine the
//! collected per-index results sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items, forking into the pool costs more than the work;
/// run inline instead. Output is identical either way.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_ITEMS: usize = 64;

/// Map `f` over `0..n`, collecting results in index order.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PARALLEL_ITEMS {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Cap the worker pool at `n` threads (0 = automatic).
///
/// Takes effect only before the first parallel call of the process; later
/// calls are ignored. A no-op in sequential builds.
#[cfg(feature = "parallel")]
pub fn set_worker_threads(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
pub fn set_worker_threads(_n: usize) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_range(1000, |i| i * 3);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i * 3));
    }
}
