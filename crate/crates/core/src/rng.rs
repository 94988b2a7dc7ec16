//! Seed derivation. Every stream of randomness in an experiment is a
//! `ChaCha8Rng` keyed by `(experiment seed, stream tag, index)`, so trials can
//! run in any order or in parallel and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated draws from sharing a key.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const POOL: u64 = 2;
    pub const TUNE_SPLIT: u64 = 3;
    pub const TRIAL: u64 = 4;
    pub const DRAW: u64 = 5;
    pub const MULTIROUND: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream tag and an index into a child seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

/// Generator for the `index`-th member of stream `tag` under `seed`.
pub fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
