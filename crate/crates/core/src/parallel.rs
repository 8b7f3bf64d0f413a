//! Worker-thread budget for op-internal parallelism.
//!
//! Work is always split per sample and reduced in sample order, so results
//! are identical for every thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "ZONALNET_THREADS";

static OVERRIDE: AtomicUsize = AtomicUsize::new(0);

/// Number of worker threads ops may use (always ≥ 1).
pub fn worker_threads() -> usize {
    let forced = OVERRIDE.load(Ordering::Relaxed);
    if forced > 0 {
        return forced;
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |cap| cap.min(available))
}

/// Forces a thread count for the whole process; `0` restores the default.
/// `1` selects the single-threaded reference path.
pub fn set_worker_threads(n: usize) {
    OVERRIDE.store(n, Ordering::Relaxed);
}

/// Applies `f(index, chunk)` to consecutive `chunk_len`-sized chunks of
/// `data`, spreading contiguous runs of chunks across worker threads.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if chunk_len == 0 {
        return;
    }
    let n_chunks = data.len() / chunk_len;
    let threads = worker_threads().min(n_chunks);
    if threads <= 1 {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
        return;
    }
    let per_thread = n_chunks.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, group) in data.chunks_mut(per_thread * chunk_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, chunk) in group.chunks_mut(chunk_len).enumerate() {
                    f(t * per_thread + j, chunk);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_indices_cover_everything_once() {
        let mut data = vec![0usize; 37 * 3];
        for_each_chunk_mut(&mut data, 3, |i, chunk| chunk.iter_mut().for_each(|v| *v = i));
        for (i, chunk) in data.chunks(3).enumerate() {
            assert!(chunk.iter().all(|&v| v == i));
        }
    }
}
