//! Deterministic sub-seed derivation so that every random stage of a session
//! is reproducible from a single session seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stage tag and an index (typically the epoch id).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub mod tags {
    pub const SIM_PAIRS: u64 = 0x5031;
    pub const SIM_ALICE: u64 = 0x5041;
    pub const SIM_BOB: u64 = 0x5042;
    pub const SIM_CLOCK: u64 = 0x5043;
    pub const CLICKS_ALICE: u64 = 0x4341;
    pub const CLICKS_BOB: u64 = 0x4342;
    pub const ERE_SAMPLE: u64 = 0x4552;
    pub const SHUFFLE: u64 = 0x5348;
    pub const PRIVACY: u64 = 0x5041_4d50;
    pub const VERIFY: u64 = 0x5645;
}
