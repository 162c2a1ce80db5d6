//! Deterministic seed derivation.
//!
//! Every random stream in an experiment is a ChaCha8 generator whose seed is
//! derived from the master seed and a path of indices (stream tag, channel,
//! SNR point, block, ...). Derivation is a SplitMix64 chain, so the same path
//! always gives the same stream regardless of evaluation order or threading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and an index path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream tags used with [`derive`].
pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const EVAL_DATA: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const PERTURB: u64 = 6;
    pub const BLOCK: u64 = 7;
    pub const SNR_DRAW: u64 = 8;
}
