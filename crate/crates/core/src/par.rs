//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool; without it the same functions run sequentially. Chunk boundaries
//! are fixed by the caller, never by the worker count, so reductions that
//! combine chunk results in order are bit-identical under any schedule.

use std::ops::Range;

/// Default chunk length for reductions.
pub const CHUNK: usize = 4096;

/// Splits `0..len` into consecutive ranges of at most `chunk` elements.
pub fn chunks(len: usize, chunk: usize) -> Vec<Range<usize>> {
    assert!(chunk > 0);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// `(0..len).map(f)` collected in index order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// `items.iter().map(f)` collected in order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Evaluates `f` on each fixed chunk of `0..len` and returns the chunk
/// results in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(len, chunk);
    map_slice(&ranges, |r| f(r.clone()))
}

/// Deterministic chunked sum of `f(i)` over `0..len`.
pub fn sum_indices<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(len, CHUNK, |r| r.map(&f).sum::<f64>()).into_iter().sum()
}
