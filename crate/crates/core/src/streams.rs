//! Named derived random streams.
//!
//! Every source of randomness in the pipeline is a `ChaCha8Rng` derived from
//! the single user seed plus a purpose string and an index. Work units
//! (selection rounds, folds, splits) each get their own stream, so results
//! are identical regardless of how the units are scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive the sub-seed for (`seed`, `purpose`, `index`).
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(purpose.as_bytes()) ^ splitmix64(index)))
}

/// Deterministic generator for one named work unit.
pub fn derive_rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}
