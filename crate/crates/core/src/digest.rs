//! Content digests used for record ids and prompt hashes.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the given bytes.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Short id: the first 16 hex chars of the SHA-256 over the `\x1f`-joined parts.
pub fn short_id(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Digest of the canonical JSON encoding of a value.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    // serde_json writes struct fields in declaration order and BTreeMap keys
    // sorted, so the encoding is stable for our record types.
    let bytes = serde_json::to_vec(value).expect("record types always serialize");
    sha256_hex(bytes)
}

/// A 64-bit seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}
