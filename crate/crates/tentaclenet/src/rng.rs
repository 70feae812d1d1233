//! Seed derivation.
//!
//! Every random decision in the crate flows from a single master seed through
//! [`SplitMix64`], so independent subsystems (weight init, batch shuffling,
//! synthetic data, resampling) draw from non-overlapping streams and a run is
//! reproducible end to end.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, xor-ed into the master seed before mixing so each consumer
/// gets an unrelated stream.
pub mod stream {
    pub const FP_INIT: u64 = 0x5448_4e45_5431_0001;
    pub const TRAIN_SHUFFLE: u64 = 0x5448_4e45_5431_0002;
    pub const VAL_SPLIT: u64 = 0x5448_4e45_5431_0003;
    pub const SYNTH: u64 = 0x5448_4e45_5431_0004;
    pub const BAGGING: u64 = 0x5448_4e45_5431_0005;
    pub const BOOSTING: u64 = 0x5448_4e45_5431_0006;
}

/// SplitMix64: tiny splittable generator; also used as the mixing finalizer
/// for seed derivation.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Seed for tentacle `index`, split off the master seed.
pub fn tentacle_seed(master_seed: u64, index: usize) -> u64 {
    SplitMix64::new(master_seed ^ index as u64).next_u64()
}

/// Seeded ChaCha stream for one subsystem. ChaCha8 keeps the sequence stable
/// across platforms and crate versions.
pub fn stream_rng(master_seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SplitMix64::new(master_seed ^ tag).next_u64())
}
