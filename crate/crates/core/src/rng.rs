//! Counter-based seeding.
//!
//! Every random draw in a simulation is taken from a generator whose seed is a
//! pure function of a tuple of counters (master seed, run, agent, iteration,
//! ...). Results therefore do not depend on how runs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a sequence of words. Order sensitive.
pub fn stable_hash(parts: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for &p in parts {
        h = mix64(h ^ mix64(p));
    }
    h
}

/// FNV-1a over the bytes of a tag, used to fold names into seeds.
pub fn tag_hash(tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator keyed by a tuple of counters.
pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    let base = stable_hash(parts);
    let mut seed = [0u8; 32];
    for (k, chunk) in seed.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(base.wrapping_add(k as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Domain tags keep streams for different purposes apart.
pub(crate) mod stream {
    pub const GRAPH: u64 = 1;
    pub const COST: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
}
