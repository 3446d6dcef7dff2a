//! Order-independent seed derivation.
//!
//! Every random draw in a run is keyed by `(seed, purpose, round, ...)` so
//! that skipping or adding a draw in one place never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derive_u32(seed: u64, path: &[u64]) -> u32 {
    let h = derive(seed, path);
    (h ^ (h >> 32)) as u32
}

pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Stream labels.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const HYPER: u64 = 2;
    pub const ACQ: u64 = 3;
    pub const GRID: u64 = 4;
    pub const RANDOM_REGION: u64 = 5;
    pub const MC: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const INSTANCE: u64 = 8;
}
