//! Order-preserving data-parallel maps with a sequential fallback.
//!
//! With the `parallel` feature the maps run on the rayon pool of the calling
//! context; otherwise (or inside [`sequential`]) they run in index order. Output
//! order never depends on scheduling, and the first error by index wins.

use crate::error::Result;
use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Execution mode in effect on the current thread.
pub fn current() -> Execution {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get()) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Runs `f` with all maps issued from this thread executed sequentially.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// Runs `f` under the given execution mode.
pub fn with_execution<R>(mode: Execution, f: impl FnOnce() -> R) -> R {
    match mode {
        Execution::Sequential => sequential(f),
        Execution::Parallel => f(),
    }
}

/// Workers available to parallel maps issued from this thread.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    if current() == Execution::Parallel {
        return rayon::current_num_threads();
    }
    1
}

/// Runs `f` on a dedicated pool of `threads` workers (`threads = 1` is
/// sequential). Without the `parallel` feature the count is ignored.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads <= 1 {
        return sequential(f);
    }
    #[cfg(feature = "parallel")]
    if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        return pool.install(f);
    }
    f()
}

pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if current() == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

pub fn try_map_range<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

pub fn try_map_slice<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    try_map_range(items.len(), |i| f(&items[i]))
}

/// Applies `f` to consecutive mutable chunks of `data` (chunk index passed along).
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if current() == Execution::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let par = map_range(1000, |i| i * i);
        let seq = sequential(|| map_range(1000, |i| i * i));
        assert_eq!(par, seq);
        assert_eq!(par[999], 999 * 999);
    }

    #[test]
    fn first_error_by_index_wins() {
        let r: Result<Vec<usize>> = try_map_range(100, |i| {
            if i % 30 == 29 {
                Err(Error::InvalidInput(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(Error::InvalidInput(s)) => assert_eq!(s, "29"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let sum = |n| with_threads(n, || map_range(257, |i| (i as f64).sqrt()).iter().sum::<f64>());
        assert_eq!(sum(1).to_bits(), sum(4).to_bits());
    }

    #[test]
    fn sequential_scope_restores_mode() {
        let before = current();
        sequential(|| assert_eq!(current(), Execution::Sequential));
        assert_eq!(current(), before);
    }
}
