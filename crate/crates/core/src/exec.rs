//! Worker abstraction for data-parallel loops.
//!
//! Implementations must return results in index order. All reductions in the
//! crate run sequentially over those ordered results, which is what makes every
//! output independent of the worker count.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(0), f(1), ..., f(len - 1)` and returns them in order.
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }
}

/// Splits `0..len` into contiguous chunks of at most `chunk` items.
pub(crate) fn chunks(len: usize, chunk: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk)).map(move |c| c * chunk..((c + 1) * chunk).min(len))
}
