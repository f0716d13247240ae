//! Seeded random streams.
//!
//! Every stochastic operation draws from a ChaCha8 stream. Streams derived
//! from `(seed, key)` are independent of iteration order, which is what makes
//! per-utterance work reproducible under any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream keyed by `(seed, key)`; the key is hashed so similar keys land on
/// unrelated streams.
pub fn keyed(seed: u64, key: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
