//! Seed derivation so every random stage of the pipeline draws from its own
//! deterministic stream.
//!
//! All randomness in the crate flows from a single master seed. Sub-seeds are
//! derived with splitmix64 over (seed, stream, index), which keeps streams
//! independent of evaluation order and of each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers used by the experiment pipeline.
pub mod stream {
    pub const NETWORK: u64 = 1;
    pub const PATTERNS: u64 = 2;
    pub const TRAIN_SCENARIO: u64 = 3;
    pub const TEST_SCENARIO: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const INFERENCE: u64 = 6;
    pub const REPORTS: u64 = 7;
    pub const SENSOR_NOISE: u64 = 8;
    pub const BASELINE: u64 = 9;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed for (stream, index) from a master seed.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    let mut state = master;
    let a = splitmix64(&mut state);
    let mut state = a ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
    let b = splitmix64(&mut state);
    let mut state = b ^ index.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    splitmix64(&mut state)
}

/// Deterministic RNG for a seed. ChaCha8 is stable across platforms.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
