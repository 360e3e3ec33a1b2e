//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into fixed-size chunks and partial results are merged in
//! chunk order, so the output is bit-identical whichever path runs and however
//! many threads rayon uses. Without the `parallel` feature every call runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

#[cfg(feature = "parallel")]
impl Execution {
    fn parallel(self) -> bool {
        self == Execution::Parallel
    }
}

/// Maps `f` over `items` keeping input order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Maps `f` over `0..n` keeping index order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Folds `items` chunk by chunk and merges chunk partials in order.
///
/// Each chunk starts from `init()`, folds its items in index order, and is
/// merged into the accumulator (itself `init()`) strictly in chunk order.
pub fn fold_chunks<T, A, I, F, M>(
    exec: Execution,
    items: &[T],
    chunk: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize, &T) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunk = chunk.max(1);
    let n_chunks = items.len().div_ceil(chunk);
    let run = |c: usize| {
        let mut acc = init();
        let lo = c * chunk;
        let hi = (lo + chunk).min(items.len());
        for (i, item) in items[lo..hi].iter().enumerate() {
            fold(&mut acc, lo + i, item);
        }
        acc
    };
    let mut total = init();
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        let wave = rayon::current_num_threads().max(1);
        let mut c = 0;
        while c < n_chunks {
            let hi = (c + wave).min(n_chunks);
            let partials: Vec<A> = (c..hi).into_par_iter().map(run).collect();
            for p in partials {
                merge(&mut total, p);
            }
            c = hi;
        }
        return total;
    }
    let _ = exec;
    for c in 0..n_chunks {
        merge(&mut total, run(c));
    }
    total
}
