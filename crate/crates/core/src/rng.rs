//! Named, counter-addressed random streams.
//!
//! A run owns one seed. Every consumer (data order, reparameterization
//! noise, metric subsampling, ...) asks for a stream by name and counter, so
//! resuming at iteration `t` reproduces exactly the draws an uninterrupted
//! run would have made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// FNV-1a, used only to turn a stream name into a 64-bit id.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for `(name, counter)`; independent of every other pair.
    pub fn stream(&self, name: &str, counter: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a(name).to_le_bytes());
        key[16..24].copy_from_slice(&counter.to_le_bytes());
        key[24..].copy_from_slice(b"devae\0\0\x01");
        ChaCha8Rng::from_seed(key)
    }
}
