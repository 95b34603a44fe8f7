//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into fixed-size chunks whose results come back in chunk
//! order, so any reduction the caller performs over them is independent of
//! the number of worker threads. Without the `parallel` feature, or after
//! [`set_parallel(false)`](set_parallel), the same chunks run on the calling
//! thread.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Rows per work unit for batch loss evaluation.
pub const BATCH_CHUNK: usize = 256;

pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Apply `f` to consecutive ranges of `0..len` and return the results in order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return ranges.into_par_iter().map(f).collect();
    }
    ranges.into_iter().map(f).collect()
}

/// Apply `f` to every index in `0..len`, results in index order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(1000, 256, |r| (r.start, r.end));
        assert_eq!(parts, vec![(0, 256), (256, 512), (512, 768), (768, 1000)]);
        assert!(map_chunks(0, 16, |r| r.len()).is_empty());
    }

    #[test]
    fn indices_preserve_order() {
        let v = map_indices(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
