//! Deterministic seed derivation.
//!
//! Every randomized step in the pipeline draws from a [`ChaCha8Rng`] whose
//! seed is derived from the run's master seed and a purpose tag, so repeated
//! runs replay bit-for-bit and independent phases never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent sub-seed from a master seed and a purpose tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 output >= 8 bytes"))
}

/// An RNG seeded for one specific purpose.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "mask"), derive_seed(7, "mask"));
        assert_ne!(derive_seed(7, "mask"), derive_seed(7, "shuffle"));
        assert_ne!(derive_seed(7, "mask"), derive_seed(8, "mask"));
    }
}
