//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit seed and derives independent
//! substreams from `(seed, tag...)`, so results never depend on call order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a seed together with a list of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| {
        splitmix64(acc ^ splitmix64(t.wrapping_add(GOLDEN)))
    })
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used across modules; kept in one place so two subsystems
/// never share a substream by accident.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const GMM_MEANS: u64 = 2;
    pub const GMM_ASSIGN: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const SPHERE: u64 = 9;
    pub const SUBSAMPLE: u64 = 10;
    pub const JITTER: u64 = 11;
}
