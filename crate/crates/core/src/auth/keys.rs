//! API key generation and salted digests.

use base64::engine::general_purpose::{STANDARD_NO_PAD, URL_SAFE_NO_PAD};
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const KEY_BYTES: usize = 32;
/// Leading characters of a key kept in clear as a lookup index.
pub const LOOKUP_PREFIX_LEN: usize = 8;
const SALT_BYTES: usize = 16;
pub const DEFAULT_ITERATIONS: u32 = 10_000;

/// Fresh url-safe key carrying `KEY_BYTES` of randomness.
pub fn generate_key() -> String {
    let mut bytes = [0u8; KEY_BYTES];
    rand::thread_rng().fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn lookup_prefix(key: &str) -> &str {
    let end = key
        .char_indices()
        .nth(LOOKUP_PREFIX_LEN)
        .map(|(i, _)| i)
        .unwrap_or(key.len());
    &key[..end]
}

/// PBKDF2-HMAC-SHA256 digest of an API key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDigest {
    pub lookup: String,
    pub salt: String,
    pub hash: String,
    pub iterations: u32,
}

impl KeyDigest {
    pub fn compute(key: &str, iterations: u32) -> Self {
        let mut salt = [0u8; SALT_BYTES];
        rand::thread_rng().fill_bytes(&mut salt);
        let hash = derive(key, &salt, iterations);
        Self {
            lookup: lookup_prefix(key).to_string(),
            salt: STANDARD_NO_PAD.encode(salt),
            hash: STANDARD_NO_PAD.encode(hash),
            iterations,
        }
    }

    pub fn verify(&self, key: &str) -> bool {
        let (Ok(salt), Ok(expected)) = (
            STANDARD_NO_PAD.decode(&self.salt),
            STANDARD_NO_PAD.decode(&self.hash),
        ) else {
            return false;
        };
        let actual = derive(key, &salt, self.iterations);
        constant_time_eq(&actual, &expected)
    }
}

fn derive(key: &str, salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(key.as_bytes(), salt, iterations.max(1), &mut out);
    out
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Fast fingerprint used only as an in-memory cache key.
pub(crate) fn fingerprint(key: &str) -> [u8; 32] {
    Sha256::digest(key.as_bytes()).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_32_random_bytes_url_safe() {
        let key = generate_key();
        let raw = URL_SAFE_NO_PAD.decode(&key).unwrap();
        assert_eq!(raw.len(), 32);
        assert!(key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'));
        assert_ne!(key, generate_key());
    }

    #[test]
    fn digest_verifies_only_the_original() {
        let key = generate_key();
        let digest = KeyDigest::compute(&key, 100);
        assert!(digest.verify(&key));
        assert!(!digest.verify(&generate_key()));
        assert!(!digest.hash.contains(&key));
        assert_eq!(digest.lookup, &key[..LOOKUP_PREFIX_LEN]);
    }

    #[test]
    fn digests_are_salted() {
        let key = generate_key();
        assert_ne!(KeyDigest::compute(&key, 10).hash, KeyDigest::compute(&key, 10).hash);
    }
}
