//! Data-parallel execution helpers.
//!
//! All parallelism in the crate goes through these helpers, which split the
//! work into independent output regions. Reductions inside each region keep
//! their fixed ascending order, so parallel and sequential execution produce
//! bitwise identical results. The `parallel` feature compiles rayon in; a
//! runtime toggle (used by `--deterministic` and by the benchmarks) can force
//! the sequential path even when the feature is enabled.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime. No-op without the
/// `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Apply `f` to each disjoint chunk of `data`, chunk index first.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Map each index in `0..n` to a value. Output order matches index order
/// regardless of execution order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
