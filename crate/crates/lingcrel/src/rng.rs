//! Seeded sub-stream derivation.
//!
//! Every randomized stage owns an RNG derived from the master seed and a
//! tag path (trial index, environment index, restart index, ...). Streams
//! are independent of scheduling order, so results are reproducible at any
//! level of parallelism.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Fixed tags keeping the derivation paths of different pipeline stages
/// disjoint.
pub mod tags {
    /// Model generation within a trial.
    pub const MODEL: u64 = 0x6d6f64;
    /// Per-environment data sampling (followed by the environment index).
    pub const ENV: u64 = 0x656e76;
    /// Per-environment ICA restarts (followed by the environment index).
    pub const ICA: u64 = 0x696361;
    /// Trial sub-streams (followed by the trial index).
    pub const TRIAL: u64 = 0x747269;
    /// Sample-size scans (followed by the probe index).
    pub const SCAN: u64 = 0x7363616e;
}

/// Derive an independent RNG stream from a master seed and a tag path.
pub fn derive_rng(master_seed: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_bytes(master_seed, tags))
}

/// Derive a 64-bit sub-seed, for APIs that take a seed rather than an RNG.
pub fn derive_seed(master_seed: u64, tags: &[u64]) -> u64 {
    let bytes = derive_bytes(master_seed, tags);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

fn derive_bytes(master_seed: u64, tags: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    for tag in tags {
        hasher.update(tag.to_le_bytes());
    }
    hasher.finalize().into()
}
