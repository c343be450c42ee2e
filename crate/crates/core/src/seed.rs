//! Seed derivation and the portable random generator used throughout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator used for every random draw in the crate. ChaCha8 produces the
/// same stream on every platform for a given seed.
pub type StudyRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> StudyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed as the first 8 bytes (little endian) of
/// `SHA-256(master_le || index_le || tag)`.
pub fn derive_seed(master: u64, index: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, 0, "design");
        assert_eq!(a, derive_seed(7, 0, "design"));
        assert_ne!(a, derive_seed(7, 1, "design"));
        assert_ne!(a, derive_seed(7, 0, "ident"));
        assert_ne!(a, derive_seed(8, 0, "design"));
    }

    #[test]
    fn rng_is_reproducible() {
        let x: Vec<f64> = rng_from_seed(3).sample_iter(rand::distributions::Standard).take(4).collect();
        let y: Vec<f64> = rng_from_seed(3).sample_iter(rand::distributions::Standard).take(4).collect();
        assert_eq!(x, y);
    }
}
