//! Deterministic randomness.
//!
//! Every random choice in the crate flows from one root seed through named
//! sub-streams, so components can be reseeded independently without coupling
//! their draw orders. Stream derivation uses FNV-1a over the root seed, the
//! stream name and an index; the result seeds a ChaCha8 generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Used wherever the crate needs a stable, platform-independent
/// hash (stream derivation, text hashing, checksums).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Incremental FNV-1a hasher for checksumming larger payloads.
pub struct Fnv1a64 {
    state: u64,
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Self { state: FNV_OFFSET }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Derives the seed for a named sub-stream of `root_seed`.
pub fn stream_seed(root_seed: u64, name: &str, index: u64) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(&root_seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update(&index.to_le_bytes());
    h.finish()
}

/// ChaCha8 generator for the sub-stream `(name, index)` of `root_seed`.
/// Same inputs always yield the same draw sequence.
pub fn stream(root_seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root_seed, name, index))
}
