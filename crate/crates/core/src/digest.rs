//! Content digests used for store staleness checks, entry ids, and manifests.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Hex-encoded SHA-256 over several parts with an unambiguous separator, so
/// that `("ab", "c")` and `("a", "bc")` hash differently.
pub fn sha256_hex_parts(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// First 16 hex characters of [`sha256_hex_parts`], used for compact ids.
pub fn short_id(parts: &[&str]) -> String {
    sha256_hex_parts(parts)[..16].to_string()
}
