//! Data-parallel helpers.
//!
//! Every helper returns results in input order, and reductions are split
//! into fixed-size chunks that do not depend on the thread count, so the
//! parallel and sequential paths produce bit-identical output.
//!
//! With the `parallel` feature disabled everything runs sequentially. With
//! it enabled, [`set_mode`] can still force the sequential path at runtime,
//! which the benchmarks use to compare both.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Parallel,
    Sequential,
}

pub fn set_mode(mode: Mode) {
    FORCE_SEQUENTIAL.store(mode == Mode::Sequential, Ordering::SeqCst);
}

/// The mode loops will actually run in.
pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Map `f` over `0..len`, collecting in index order.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel && len > 1 {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}

/// Map `f` over a slice, collecting in order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Run `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of `data`.
///
/// `work_hint` is a rough flop count; small jobs stay on the calling thread.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, work_hint: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel && work_hint >= PARALLEL_WORK_THRESHOLD && data.len() > chunk {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = work_hint;
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Below this many flops a kernel is not worth splitting across threads.
pub const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunked_writes_cover_everything() {
        let mut data = vec![0.0; 1 << 18];
        for_each_chunk_mut(&mut data, 1000, usize::MAX, |ci, c| {
            for (k, x) in c.iter_mut().enumerate() {
                *x = (ci * 1000 + k) as f64;
            }
        });
        assert!(data.iter().enumerate().all(|(i, &x)| x == i as f64));
    }
}
