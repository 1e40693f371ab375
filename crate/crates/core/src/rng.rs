//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 so that runs are bit-identical across
//! platforms. Each problem gets its own stream, derived from the run seed and
//! the problem id, so results do not depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Independent stream for `key` under `seed`.
pub fn stream(seed: u64, key: &str) -> StreamRng {
    let digest = Sha256::digest(key.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(word));
    rng
}
