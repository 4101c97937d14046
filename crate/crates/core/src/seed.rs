//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a `u64` derived from a master
//! seed and a path of tags (stage, block, restart, cell, ...). Derivation is a
//! SplitMix64 chain, so it is a pure function of its inputs and stable across
//! platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(master), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// The crate's RNG: ChaCha8, whose stream is specified and portable.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags shared across modules.
pub mod tag {
    pub const TEACHER: u64 = 1;
    pub const STUDENT: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const IMITATION: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const SCRATCH: u64 = 6;
    pub const TRAIN_DATA: u64 = 10;
    pub const TEST_DATA: u64 = 11;
    pub const CALIBRATION: u64 = 12;
    pub const NOISE: u64 = 13;
    pub const GENERATOR: u64 = 14;
    pub const EPOCH: u64 = 20;
    pub const CELL: u64 = 30;
}
