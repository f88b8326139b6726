//! Seeded randomness and stable hashing.
//!
//! Every random draw in the crate flows through [`seeded`] so that a config
//! seed fully determines a run. Hashes use xxh64, which is stable across
//! platforms and compiler versions (unlike `std`'s `DefaultHasher`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twox_hash::XxHash64;

pub type Rng = ChaCha8Rng;

/// Deterministic generator for `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a named sub-task of a seeded run.
pub fn derived(seed: u64, stream: &str) -> Rng {
    seeded(hash_bytes(stream.as_bytes(), seed))
}

pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    XxHash64::oneshot(seed, bytes)
}

pub fn hash_words(words: &[u64], seed: u64) -> u64 {
    let mut buf = Vec::with_capacity(words.len() * 8);
    for w in words {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    hash_bytes(&buf, seed)
}
