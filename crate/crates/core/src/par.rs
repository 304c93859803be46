//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it, or with [`Execution::Sequential`], everything runs on the
//! calling thread. Results always come back in input order and reductions are
//! folded in a fixed chunk order, so both paths produce bit-identical output.

/// How a data-parallel map is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Chunk size used by [`map_reduce_chunks`]. Fixed so that floating point
/// sums do not depend on the number of worker threads.
pub const REDUCE_CHUNK: usize = 64;

/// Ordered map over a slice.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Ordered map over an index range.
pub fn map_range<R, F>(exec: Execution, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Splits `items` into fixed-size chunks, folds each chunk sequentially with
/// `fold`, then merges the chunk results left to right with `merge`.
pub fn map_reduce_chunks<T, A, I, F, M>(exec: Execution, items: &[T], init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize, &T) + Sync + Send,
    M: Fn(&mut A, A),
{
    let n_chunks = items.len().div_ceil(REDUCE_CHUNK);
    let partials = map_range(exec, n_chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(items.len());
        let mut acc = init();
        for (i, item) in items[lo..hi].iter().enumerate() {
            fold(&mut acc, lo + i, item);
        }
        acc
    });
    let mut out = init();
    for p in partials {
        merge(&mut out, p);
    }
    out
}

/// Configures the global worker pool. Only the first call has an effect.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
