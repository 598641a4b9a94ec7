//! Seed derivation. Every random stream in the pipeline is a ChaCha8 rng keyed
//! by a base seed and a stream id, so no component holds hidden global state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over the pair `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Named stream ids, kept distinct so streams never alias.
pub mod streams {
    pub const SCENES: u64 = 1;
    pub const GRID: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_STEP: u64 = 1 << 32;
    pub const SAMPLING: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const SHUFFLE: u64 = 2 << 32;
}
