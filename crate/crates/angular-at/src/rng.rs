//! Seed derivation for reproducible, shard-invariant randomness.
//!
//! Every stochastic component (init, shuffling, attack restarts, SPSA
//! probes) gets its own ChaCha8 stream whose seed is derived from a base
//! seed plus structural tags (epoch, batch, example index). Deriving
//! per-example streams makes parallel sharding bit-identical to sequential
//! execution: a shard only needs its rows' absolute indices.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period mix of a 64-bit state.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically combine a base seed with structural tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
