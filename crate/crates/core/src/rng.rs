//! Counter-style seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a seed
//! derived from a tuple of integers, e.g. `(run seed, round, purpose)`. Two
//! draws with the same key are identical regardless of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one 64-bit seed.
pub fn derive(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5EED_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Hash of a real vector's exact bit pattern.
pub fn hash_f64s(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0xF00D_u64, |acc, v| splitmix64(acc ^ v.to_bits()))
}

pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(keys))
}

pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Tags that separate independent streams drawn from the same seed.
pub mod purpose {
    pub const RESET: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const PLANNER: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const EXPLORE: u64 = 7;
}
