//! Deterministic seeding. Every random stream in the engine is derived from a
//! base seed and a list of integer tags, so results do not depend on thread
//! scheduling or on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used across the engine.
pub mod tag {
    pub const AI_PRIOR: u64 = 1;
    pub const USER_PRIOR: u64 = 2;
    pub const QUERY: u64 = 3;
    pub const AI_POLICY: u64 = 4;
    pub const USER_CHOICE: u64 = 5;
    pub const ENTROPY: u64 = 6;
    pub const PLAN: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(base: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, tags))
}
