//! Seed derivation and PRNG construction.
//!
//! Every stochastic routine takes an explicit `u64` seed and builds its own
//! ChaCha8 stream, so results are reproducible across platforms. Child seeds
//! for replicates, candidate dimensions, and bandwidth draws are derived from
//! a master seed with a SplitMix64 counter scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `master` and a path of counters.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// Named streams so that unrelated consumers of one master seed never collide.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const CHAIN: u64 = 2;
    pub const ESTIMATE: u64 = 3;
    pub const DIMENSION: u64 = 4;
    pub const DATA: u64 = 5;
    pub const CANDIDATE: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const EMBEDDING: u64 = 8;
}
