//! Digest and signature plumbing.
//!
//! Both primitives sit behind traits so a deployment can swap in a real
//! hash or signature scheme. The defaults are SHA-256 and a keyed-digest
//! signature stub whose verifier resolves issuers through a key registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// A 256-bit digest value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Number of leading zero bits, used by the proof-of-work check.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Fingerprint of an actor's verification key (an ICV or an RSU).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct IdentityRef(pub [u8; 32]);

impl fmt::Debug for IdentityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IdentityRef({})", &hex::encode(self.0)[..16])
    }
}

/// A fixed 256-bit digest function.
pub trait DigestFn: Send + Sync {
    fn digest(&self, data: &[u8]) -> Digest;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256Digest;

impl DigestFn for Sha256Digest {
    fn digest(&self, data: &[u8]) -> Digest {
        Digest(Sha256::digest(data).into())
    }
}

/// Private signing material.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey(Vec<u8>);

impl SigningKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        SigningKey(bytes.into())
    }

    /// Deterministic key for a named actor, e.g. `("icv", 7)` under a run seed.
    pub fn derive(seed: u64, role: &str, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"kshare-key");
        h.update(seed.to_be_bytes());
        h.update((role.len() as u32).to_be_bytes());
        h.update(role.as_bytes());
        h.update(index.to_be_bytes());
        SigningKey(h.finalize().to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

pub trait SignatureScheme: Send + Sync {
    fn fingerprint(&self, key: &SigningKey) -> IdentityRef;
    fn sign(&self, key: &SigningKey, message: &[u8]) -> Vec<u8>;
    /// Unknown issuers verify as `false`.
    fn verify(&self, issuer: &IdentityRef, message: &[u8], signature: &[u8]) -> bool;
}

/// Keyed-digest signature stub: `fingerprint = H(key)`, `sig = H(key || msg)`.
///
/// Verification needs the key itself, so the scheme keeps a registry of
/// every key it has fingerprinted through [`KeyedDigestScheme::register`].
#[derive(Default)]
pub struct KeyedDigestScheme {
    keys: BTreeMap<IdentityRef, SigningKey>,
}

impl KeyedDigestScheme {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, key: &SigningKey) -> IdentityRef {
        let id = self.fingerprint(key);
        self.keys.insert(id, key.clone());
        id
    }

    pub fn is_registered(&self, id: &IdentityRef) -> bool {
        self.keys.contains_key(id)
    }

    fn mac(key: &SigningKey, message: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((key.0.len() as u32).to_be_bytes());
        h.update(&key.0);
        h.update(message);
        h.finalize().into()
    }
}

impl SignatureScheme for KeyedDigestScheme {
    fn fingerprint(&self, key: &SigningKey) -> IdentityRef {
        let mut h = Sha256::new();
        h.update(b"kshare-fingerprint");
        h.update(&key.0);
        IdentityRef(h.finalize().into())
    }

    fn sign(&self, key: &SigningKey, message: &[u8]) -> Vec<u8> {
        Self::mac(key, message).to_vec()
    }

    fn verify(&self, issuer: &IdentityRef, message: &[u8], signature: &[u8]) -> bool {
        match self.keys.get(issuer) {
            Some(key) => Self::mac(key, message).as_slice() == signature,
            None => false,
        }
    }
}

/// The digest and signature scheme shared by every ledger in one run.
pub struct CryptoSuite {
    pub digest: Box<dyn DigestFn>,
    pub signatures: Box<dyn SignatureScheme>,
}

impl CryptoSuite {
    pub fn new(digest: Box<dyn DigestFn>, signatures: Box<dyn SignatureScheme>) -> Self {
        CryptoSuite { digest, signatures }
    }

    /// SHA-256 plus the keyed-digest stub over `registry`.
    pub fn with_registry(registry: KeyedDigestScheme) -> Self {
        CryptoSuite::new(Box::new(Sha256Digest), Box::new(registry))
    }
}

impl fmt::Debug for CryptoSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CryptoSuite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_zero_bits_counts_across_bytes() {
        let mut d = [0xffu8; 32];
        assert_eq!(Digest(d).leading_zero_bits(), 0);
        d[0] = 0;
        d[1] = 0x1f;
        assert_eq!(Digest(d).leading_zero_bits(), 11);
        assert_eq!(Digest::ZERO.leading_zero_bits(), 256);
    }

    #[test]
    fn stub_signature_round_trip() {
        let mut scheme = KeyedDigestScheme::new();
        let key = SigningKey::derive(1, "icv", 0);
        let id = scheme.register(&key);
        let sig = scheme.sign(&key, b"hello");
        assert!(scheme.verify(&id, b"hello", &sig));
        assert!(!scheme.verify(&id, b"hellp", &sig));

        let stranger = scheme.fingerprint(&SigningKey::derive(1, "icv", 1));
        assert!(!scheme.verify(&stranger, b"hello", &sig));
    }
}
