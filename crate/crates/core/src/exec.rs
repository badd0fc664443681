//! Chunked data-parallel execution with a sequential fallback.
//!
//! Work is always split into fixed-size chunks whose results are returned in
//! chunk order, so any reduction done by the caller sees the same operands in
//! the same order whether the chunks ran on one thread or many. That keeps
//! floating-point reductions bit-identical across both modes.
//!
//! The parallel mode needs the `parallel` crate feature (on by default).

use std::ops::Range;

/// Execution strategy for the batch loops of the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

/// Samples per chunk for batched scoring and evaluation.
pub const CHUNK: usize = 64;

/// Splits `0..len` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect()
}

impl Exec {
    /// Applies `f` to every chunk of `0..len` and returns the results in
    /// chunk order.
    pub fn map_chunks<T, F>(self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let ranges = chunk_ranges(len, chunk);
        self.map(ranges, f)
    }

    /// Ordered map over owned items.
    pub fn map<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => items.into_iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
        }
    }
}
