//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 keyed by a single 64-bit
//! run seed. Components never share a stream: each one selects a ChaCha stream
//! id from the 64-bit FNV-1a hash of a fixed label (`"synth/linear"`,
//! `"dynamics/init"`, ...). Two components therefore see independent streams
//! and adding a new component never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Generator for `label` under the run seed `seed`.
pub fn stream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(label.as_bytes()));
    rng
}

/// Derives a child seed, e.g. one per generated sequence.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = fnv1a64(label.as_bytes()) ^ seed;
    h = h.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
