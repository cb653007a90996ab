//! Per-species random streams.
//!
//! Each species draws from its own generator seeded with
//! `seed ^ hash64(taxon_id)`, so results do not depend on the order or
//! thread in which species are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::catalog::TaxonId;

/// First 64 bits (little endian) of SHA-256 over the id bytes.
pub fn hash64(data: &str) -> u64 {
    let digest = Sha256::digest(data.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn taxon_rng(seed: u64, taxon: &TaxonId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ hash64(taxon.as_str()))
}
