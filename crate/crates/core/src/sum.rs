//! Deterministic summation. Chunk boundaries are fixed by the problem size, not
//! the worker count, and chunk sums are combined in a fixed binary tree, so the
//! result is bit-identical for any number of threads.

use std::ops::Range;

use rayon::prelude::*;

/// Items per chunk in [`par_sum`].
pub const CHUNK: usize = 4096;

/// Pairwise (tree) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        len if len <= 8 => xs.iter().fold(0.0, |a, b| a + b),
        len => {
            let mid = len / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// `Σ_{k<len} term(k)` evaluated in parallel with a fixed reduction order.
pub fn par_sum<F>(len: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    par_sum_ranges(len, CHUNK, |r| {
        let mut acc = 0.0;
        for k in r {
            acc += term(k);
        }
        acc
    })
}

/// Splits `0..len` into fixed ranges of `chunk` items, sums each with
/// `chunk_sum`, and reduces the partial sums pairwise.
pub fn par_sum_ranges<F>(len: usize, chunk: usize, chunk_sum: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync,
{
    let chunk = chunk.max(1);
    let count = len.div_ceil(chunk);
    let partial: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|c| chunk_sum(c * chunk..((c + 1) * chunk).min(len)))
        .collect();
    pairwise_sum(&partial)
}

/// Runs `f` on a dedicated pool with `threads` workers (0 means the default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}
