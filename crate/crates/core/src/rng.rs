//! Deterministic PRNG streams.
//!
//! Every stochastic stage draws from its own ChaCha8 stream whose seed is
//! derived from `(global_seed, stage tag, index...)`. Work can then be spread
//! over threads in any order and still reproduce the single-threaded result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags; keeps streams of different stages disjoint.
pub mod tag {
    pub const SYNTH_TRAIN: u64 = 1;
    pub const SYNTH_TEST: u64 = 2;
    pub const OAMIX: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const CONTRASTIVE: u64 = 6;
    pub const CORRUPT: u64 = 7;
    pub const LIFT: u64 = 8;
    pub const AUGMENT: u64 = 9;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PATH_SALT: u64 = 0xA076_1D64_78BD_642F;

/// Mixes a global seed with a path of indices into a single 64-bit seed.
pub fn derive_seed(global: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(global), |acc, &p| splitmix64(acc ^ splitmix64(p ^ PATH_SALT)))
}

pub fn stream(global: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(global, path))
}
