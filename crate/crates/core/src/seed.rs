//! Seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream tag (SplitMix64 finaliser) so that
/// different consumers of one run seed never share a generator.
pub fn derive(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag))
}

// Stream tags used across the crate.
pub const TAG_POLICY: u64 = 1;
pub const TAG_TAMPER: u64 = 2;
pub const TAG_ATTACK: u64 = 3;
pub const TAG_INIT: u64 = 4;
pub const TAG_REPLAY: u64 = 5;
pub const TAG_EPISODE: u64 = 6;
pub const TAG_WORKLOAD: u64 = 0x100;
