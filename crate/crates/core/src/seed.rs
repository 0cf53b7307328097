//! Named seed derivation.
//!
//! Every random stream in the toolkit is keyed by `(root seed, purpose label)`
//! so that any stage can be re-run on its own and still see the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from a root seed and a purpose label.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Label for a stream that also depends on a mismatched:matched ratio.
pub fn ratio_label(purpose: &str, k: f64) -> String {
    format!("{purpose}/k={k}")
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str) -> Rng {
    rng(derive(root, label))
}
