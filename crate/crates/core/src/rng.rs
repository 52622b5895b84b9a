//! Deterministic random streams.
//!
//! All randomness descends from one user seed. Each independent work unit
//! (a level's i.i.d. batch, one Markov chain, one repeated run) gets its own
//! ChaCha stream so that results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Chain slot reserved for the i.i.d. batch of a level.
pub const IID_CHAIN: u32 = u32::MAX;

/// Random stream for work unit `chain` of subset level `level`.
pub fn stream(seed: u64, level: u32, chain: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 32) | chain as u64);
    rng
}

/// SplitMix64 finalizer; derives the seed of repeated run `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
