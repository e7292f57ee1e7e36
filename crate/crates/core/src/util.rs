//! Small helpers shared across modules.

use sha2::{Digest, Sha256};

/// Stable 64-bit seed for a named item under a master seed.
///
/// Independent of iteration order and platform, so per-item random streams
/// can be reproduced in isolation.
pub fn derive_seed(master_seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a slice of f32 values (bitwise, little endian).
pub fn hash_f32(values: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Short config hash: first 16 hex chars of the SHA-256 of a serializable value.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    sha256_hex(&json)[..16].to_string()
}
