//! Deterministic seed derivation.
//!
//! Every random choice in the pipeline flows from one configured seed.
//! Sub-seeds are derived by hashing a purpose tag (and optional index)
//! into the root seed, so changing the root seed moves every downstream
//! artifact coherently while distinct purposes stay decorrelated.
//! The hash is fixed (FNV-1a + splitmix64), not platform-dependent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from the root seed and a purpose tag.
pub fn derive(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ fnv1a(tag.as_bytes()))
}

/// Derive a sub-seed that also depends on an index (epoch, sample, ...).
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(seed, tag) ^ splitmix64(index))
}

/// Seeded RNG for a given purpose. ChaCha output is identical on every
/// platform, which the bitwise-reproducibility contract relies on.
pub fn rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

pub fn rng_indexed(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, tag, index))
}
