//! Counter-based seeding: every random stream is derived from a master seed
//! and content identifiers, never from a shared sequential generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator keyed by `(master_seed, parts...)`. Parts are length-prefixed so
/// distinct tuples never collide by concatenation.
pub fn keyed_rng(master_seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
