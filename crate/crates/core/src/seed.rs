//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is seeded from a global seed plus a
//! tag path (sample id, domain name, epoch, ...). The derivation is a SHA-256
//! over the little-endian seed and the tag bytes, so it is stable across
//! platforms and toolchain versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `seed` and an ordered list of tags.
pub fn derive(seed: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Per-sample seed: `hash(global_seed, id)`.
pub fn sample_seed(global: u64, id: &str) -> u64 {
    derive(global, &["sample", id])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
