//! Seed management.
//!
//! A single master seed expands into named sub-streams so that changing the
//! number of draws consumed by one stage (placement, churn, noise, weight
//! init, shuffling) cannot silently perturb any other stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream names used by the pipeline.
pub mod streams {
    pub const PLACEMENT: &str = "placement";
    pub const ACTIVITY: &str = "activity";
    pub const NOISE: &str = "noise";
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
}

/// Derives an independent, reproducible RNG from `(master, name, index)`.
pub fn substream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0u8]);
    h.update(name.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Derives a stream salted with an extra label (e.g. per-policy noise).
pub fn substream_tagged(master: u64, name: &str, tag: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0u8]);
    h.update(name.as_bytes());
    h.update([1u8]);
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
