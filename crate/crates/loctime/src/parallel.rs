//! Deterministic seed derivation and batch-parallel folding.
//!
//! Monte Carlo runs must produce bit-identical aggregates whatever the
//! worker count. The pattern used throughout the crate: split the index
//! space into fixed-size batches, fill one accumulator per batch (possibly
//! in parallel), then fold the batch accumulators sequentially in batch
//! order. Per-path RNG seeds come from a counter-based mix of the base
//! seed, so path i's randomness never depends on scheduling.

use std::ops::Range;

/// Paths per batch; fixed so the reduction tree never depends on the
/// number of workers.
pub const BATCH_SIZE: u64 = 256;

/// The standard 64-bit finalizer mix (splitmix64). Frozen: reports note
/// that per-path streams are derived with this exact function.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-path seed: `splitmix64` applied to a stream-salted base, advanced by
/// a golden-ratio counter. Distinct `stream` values give independent
/// substreams of one experiment (e.g. the two paths of a pair).
pub fn derive_seed(base_seed: u64, stream: u64, index: u64) -> u64 {
    let stream_base = splitmix64(base_seed ^ stream.wrapping_mul(0xa076_1d64_78bd_642f));
    splitmix64(stream_base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Fixed-size contiguous batches covering `0..n`.
pub fn batches(n: u64) -> Vec<Range<u64>> {
    let mut out = Vec::with_capacity(((n + BATCH_SIZE - 1) / BATCH_SIZE) as usize);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + BATCH_SIZE).min(n);
        out.push(lo..hi);
        lo = hi;
    }
    out
}

/// Map each batch to a partial accumulator (in parallel) and fold the
/// partials in batch order. `map` must be a pure function of the batch
/// range for the aggregate to be reproducible.
pub fn fold_batches<A, M, F>(n: u64, map: M, mut fold: F) -> Option<A>
where
    A: Send,
    M: Fn(Range<u64>) -> A + Sync + Send,
    F: FnMut(A, A) -> A,
{
    use rayon::prelude::*;
    let partials: Vec<A> = batches(n).into_par_iter().map(map).collect();
    let mut iter = partials.into_iter();
    let first = iter.next()?;
    Some(iter.fold(first, |acc, x| fold(acc, x)))
}
