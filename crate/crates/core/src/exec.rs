//! Path-parallel execution helpers.
//!
//! With the `parallel` feature (default) the per-path loops run on the rayon
//! pool of the calling thread; without it they run sequentially. Reductions go
//! through [`chunked_sum`], which sums fixed-size chunks and then combines the
//! partial sums in chunk order, so every result is bit-identical regardless of
//! the feature flag or the number of worker threads.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Error;

/// Number of paths per reduction chunk.
pub const REDUCE_CHUNK: usize = 512;

/// Evaluates `f(i)` for `i in 0..n`, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Applies `f(row_index, row)` to every `width`-sized row of `buf`.
pub fn for_each_row<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Applies `f(first_row, block)` to consecutive blocks of up to
/// [`REDUCE_CHUNK`] rows, so scratch buffers can be set up once per block.
pub fn for_each_block<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    let size = width * REDUCE_CHUNK;
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(size).enumerate().for_each(|(i, block)| f(i * REDUCE_CHUNK, block));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(size).enumerate().for_each(|(i, block)| f(i * REDUCE_CHUNK, block));
    }
}

/// Fallible variant of [`for_each_row`]. All rows are processed; the error of
/// the lowest failing row index is returned so failures are reproducible.
pub fn try_for_each_row<F>(buf: &mut [f64], width: usize, f: F) -> Result<(), Error>
where
    F: Fn(usize, &mut [f64]) -> Result<(), Error> + Sync + Send,
{
    if width == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    let first = buf
        .par_chunks_mut(width)
        .enumerate()
        .filter_map(|(i, row)| f(i, row).err().map(|e| (i, e)))
        .min_by_key(|(i, _)| *i);
    #[cfg(not(feature = "parallel"))]
    let first = buf
        .chunks_mut(width)
        .enumerate()
        .filter_map(|(i, row)| f(i, row).err().map(|e| (i, e)))
        .min_by_key(|(i, _)| *i);
    match first {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

/// Deterministic reduction over `0..n`: `f(range, acc)` accumulates the
/// contribution of one chunk into a zeroed `acc` of length `width`.
pub fn chunked_sum<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_indexed(chunks, |c| {
        let mut acc = vec![0.0; width];
        let start = c * REDUCE_CHUNK;
        f(start..(start + REDUCE_CHUNK).min(n), &mut acc);
        acc
    });
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Deterministic mean of `f(i)` over `0..n`.
pub fn mean_of<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return 0.0;
    }
    let s = chunked_sum(n, 1, |range, acc| {
        for i in range {
            acc[0] += f(i);
        }
    });
    s[0] / n as f64
}
