//! Named sub-seeds derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Stable 64-bit seed for `(root, name)`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn stage_rng(root: u64, name: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

pub fn rng_from_seed(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
