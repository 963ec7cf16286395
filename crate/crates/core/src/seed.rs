//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream seeded by one of these, so runs are reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `index` within `stream` of `base`.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams so that different consumers of one base seed never
/// collide.
pub mod stream {
    pub const MODEL_ACTION: u64 = 1;
    pub const TARGET_RESPONSE: u64 = 2;
    pub const OBJECTIVE: u64 = 3;
    pub const CHAT: u64 = 4;
    pub const EVALUATE: u64 = 5;
}
