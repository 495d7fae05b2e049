//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, work is spread over the rayon pool unless
//! parallelism has been switched off at runtime with [`set_parallel`].
//! Results never depend on the execution mode: maps preserve index order and
//! reductions sum fixed-size chunks in ascending order.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Chunk length for reductions. Fixed so that summation order is independent
/// of the thread count.
pub const REDUCE_CHUNK: usize = 4096;

/// Enables or disables parallel execution at runtime. Has no effect when the
/// crate is built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Deterministic sum of `f(i)` over `0..n`.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map_indexed(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        (start..end).map(&f).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Deterministic component-wise sums of a fixed-width vector-valued `f(i)`.
pub fn sum_indexed_vec<const W: usize, F>(n: usize, f: F) -> [f64; W]
where
    F: Fn(usize) -> [f64; W] + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map_indexed(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        let mut acc = [0.0; W];
        for i in start..end {
            let v = f(i);
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        }
        acc
    });
    let mut total = [0.0; W];
    for p in partial {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_mode_independent() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        set_parallel(true);
        let a = sum_indexed(100_003, f);
        set_parallel(false);
        let b = sum_indexed(100_003, f);
        set_parallel(true);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(10_000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
