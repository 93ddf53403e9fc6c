//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the rayon pool; without it
//! (or after [`set_sequential`]) they are plain loops. Results are always
//! assembled in input order, so output never depends on scheduling.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force sequential execution at runtime (used by benchmarks and tests).
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// Whether the helpers currently dispatch to the thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Number of worker threads available to the helpers.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Run `f` inside a pool with `threads` workers (sequential build: runs `f` directly).
pub fn with_workers<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

/// Ordered map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Ordered map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Run two closures, concurrently when parallel.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::join(a, b);
        }
    }
    (a(), b())
}

/// Apply `f(index, chunk)` to consecutive chunks of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Pairwise (tree) summation of per-item contributions, in a fixed order.
///
/// The reduction tree depends only on `n`, so the result is bitwise identical
/// between parallel and sequential runs.
pub fn tree_sum<U, F, A>(n: usize, leaf: F, add: A, zero: U) -> U
where
    U: Send + Sync + Clone,
    F: Fn(usize) -> U + Sync + Send,
    A: Fn(U, U) -> U + Sync + Send,
{
    fn rec<U, F, A>(lo: usize, hi: usize, leaf: &F, add: &A, zero: &U, par: bool) -> U
    where
        U: Send + Sync + Clone,
        F: Fn(usize) -> U + Sync + Send,
        A: Fn(U, U) -> U + Sync + Send,
    {
        match hi - lo {
            0 => zero.clone(),
            1 => leaf(lo),
            len => {
                let mid = lo + len / 2;
                #[cfg(feature = "parallel")]
                {
                    if par && len > 8 {
                        let (a, b) = rayon::join(
                            || rec(lo, mid, leaf, add, zero, par),
                            || rec(mid, hi, leaf, add, zero, par),
                        );
                        return add(a, b);
                    }
                }
                let a = rec(lo, mid, leaf, add, zero, par);
                let b = rec(mid, hi, leaf, add, zero, par);
                add(a, b)
            }
        }
    }
    rec(0, n, &leaf, &add, &zero, is_parallel())
}
