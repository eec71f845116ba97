//! Runtime toggle between rayon data-parallel loops and a sequential
//! fallback.
//!
//! With the `parallel` feature disabled rayon is not compiled in at all;
//! with it enabled, `set_parallel(false)` (or `--threads 1`) selects the
//! sequential path at runtime so both can be benchmarked in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enable or disable data-parallel loops at runtime.
pub fn set_parallel(on: bool) {
    PARALLEL.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

/// Whether grid loops currently run on the rayon pool.
pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Apply `f` to every disjoint row band `(start_row, chunk)` of `data`,
/// where `data` is a row-major buffer of `n_rows` rows of `row_len`.
///
/// Output rows are disjoint, so the parallel and sequential paths are
/// bitwise identical.
pub fn for_each_row_band<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(data.len() % row_len.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            data.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(r, chunk)| f(r, chunk));
            return;
        }
    }
    for (r, chunk) in data.chunks_mut(row_len).enumerate() {
        f(r, chunk);
    }
}

/// Split several equally sized buffers into per-row bundles: the result
/// has one entry per row holding that row's slice of every buffer.
pub fn row_bundles<'a>(bufs: Vec<&'a mut [f64]>, row_len: usize) -> Vec<Vec<&'a mut [f64]>> {
    assert!(!bufs.is_empty());
    let n_rows = bufs[0].len() / row_len;
    let mut iters: Vec<_> = bufs.into_iter().map(|b| b.chunks_mut(row_len)).collect();
    (0..n_rows)
        .map(|_| iters.iter_mut().map(|it| it.next().unwrap()).collect())
        .collect()
}

/// Run `f(row_index, row_slices)` over bundles produced by [`row_bundles`];
/// rows are disjoint so the parallel path is bitwise identical.
pub fn for_each_bundle<F>(bundles: Vec<Vec<&mut [f64]>>, f: F)
where
    F: Fn(usize, &mut [&mut [f64]]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            bundles
                .into_par_iter()
                .enumerate()
                .for_each(|(r, mut b)| f(r, &mut b));
            return;
        }
    }
    for (r, mut b) in bundles.into_iter().enumerate() {
        f(r, &mut b);
    }
}

/// Deterministic pairwise summation; the reduction order is fixed and
/// independent of the thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}
