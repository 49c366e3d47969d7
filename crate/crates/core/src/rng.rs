//! Seed-stream derivation.
//!
//! Every random draw in the crate flows from one master seed. Independent
//! streams for (trial, repetition, role, ...) are derived by folding each
//! index into the master seed with the SplitMix64 finalizer and seeding a
//! ChaCha8 generator with the result:
//!
//! ```text
//! s_0 = master
//! s_{k+1} = splitmix64(s_k ^ splitmix64(index_k + 0x9E37_79B9_7F4A_7C15))
//! ```
//!
//! The mixing function is part of the reproducibility contract: changing it
//! changes every experiment's bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |acc, &idx| {
        splitmix64(acc ^ splitmix64(idx.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

/// An RNG stream for the given master seed and index path.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stream-role tags used as the first path element so that, e.g., the
/// instance sampler and the protocol of the same trial never share a stream.
pub mod role {
    pub const INSTANCE: u64 = 1;
    pub const PROTOCOL: u64 = 2;
    pub const REFEREE: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const GAME: u64 = 5;
}
