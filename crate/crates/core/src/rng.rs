//! Deterministic random streams.
//!
//! Every Monte Carlo loop is split into fixed-size batches. Batch `i` draws
//! from ChaCha8 seeded with the run seed and switched to stream `i`, so the
//! numbers a replication sees never depend on how batches are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Replications per batch.
pub const BATCH: usize = 4096;

/// RNG for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a sub-experiment `index` of a run seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Runs `reps` replications in batches and returns per-batch results in
/// batch order. `f(rng, start, len)` handles replications `start..start+len`.
pub fn batched<R, F>(reps: usize, seed: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut ChaCha8Rng, usize, usize) -> R + Sync,
{
    let batches = reps.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let len = BATCH.min(reps - start);
            let mut rng = stream_rng(seed, b as u64);
            f(&mut rng, start, len)
        })
        .collect()
}
