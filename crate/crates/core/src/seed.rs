//! Deterministic seed derivation.
//!
//! Every source of randomness in the pipeline is a [`rand_chacha::ChaCha8Rng`]
//! seeded through [`subseed`] from one master seed plus a domain tag and
//! object/epoch indices. Work scheduled in parallel therefore produces the
//! same streams as the sequential fallback.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep unrelated streams apart even when indices collide.
pub mod domain {
    pub const GEN: u64 = 0x01;
    pub const AUGMENT: u64 = 0x02;
    pub const QUERY: u64 = 0x03;
    pub const PART_PERM: u64 = 0x04;
    pub const FLOW_NOISE: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const SAMPLE: u64 = 0x07;
    pub const REFINE: u64 = 0x08;
    pub const BASELINE: u64 = 0x09;
    pub const SHUFFLE: u64 = 0x0a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a list of parts (domain tag first).
pub fn subseed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &part in parts {
        state = splitmix64(state ^ part.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// Seeded RNG for a derived stream.
pub fn rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, parts))
}

/// Seeded RNG directly from a raw seed value.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
