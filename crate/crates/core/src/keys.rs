//! Namespace identities: Ed25519 keypairs, public keys and signatures.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("namespace has no private key")]
    MissingPrivateKey,
    #[error("invalid hex key: {0}")]
    InvalidHex(String),
}

/// A 32-byte Ed25519 verification key identifying a namespace.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub const LEN: usize = 32;

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(s.trim()).map_err(|e| KeyError::InvalidHex(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|v: Vec<u8>| {
            KeyError::InvalidHex(format!("expected 32 bytes, got {}", v.len()))
        })?;
        Ok(PublicKey(arr))
    }

    /// First eight hex digits, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    /// Strict Ed25519 verification. Keys that are not valid curve points
    /// never verify anything.
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        vk.verify_strict(msg, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for PublicKey {
    type Err = KeyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PublicKey::from_hex(s)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub(crate) [u8; 64]);

impl Signature {
    pub const LEN: usize = 64;

    pub const fn from_bytes(bytes: [u8; 64]) -> Self {
        Signature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(s.trim()).map_err(|e| KeyError::InvalidHex(e.to_string()))?;
        let arr: [u8; 64] = bytes.try_into().map_err(|v: Vec<u8>| {
            KeyError::InvalidHex(format!("expected 64 bytes, got {}", v.len()))
        })?;
        Ok(Signature(arr))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Signature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A namespace keypair. The private half is present only for namespaces the
/// local user owns; remote namespaces are represented by their public key.
///
/// Equality is by public key.
#[derive(Clone)]
pub struct NamespaceKey {
    public: PublicKey,
    signing: Option<SigningKey>,
}

impl NamespaceKey {
    /// Derives the keypair from a 32-byte seed, which is used directly as the
    /// Ed25519 secret key. Without a seed, fresh OS entropy is used.
    pub fn generate(seed: Option<[u8; 32]>) -> Self {
        let seed = seed.unwrap_or_else(rand::random);
        let signing = SigningKey::from_bytes(&seed);
        NamespaceKey {
            public: PublicKey(signing.verifying_key().to_bytes()),
            signing: Some(signing),
        }
    }

    pub fn from_public(public: PublicKey) -> Self {
        NamespaceKey {
            public,
            signing: None,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn has_private(&self) -> bool {
        self.signing.is_some()
    }

    /// The seed this key was derived from, if the private part is held.
    pub fn secret_bytes(&self) -> Option<[u8; 32]> {
        self.signing.as_ref().map(SigningKey::to_bytes)
    }

    pub fn public_only(&self) -> NamespaceKey {
        NamespaceKey::from_public(self.public)
    }

    pub fn sign(&self, msg: &[u8]) -> Result<Signature, KeyError> {
        let sk = self.signing.as_ref().ok_or(KeyError::MissingPrivateKey)?;
        Ok(Signature(sk.sign(msg).to_bytes()))
    }
}

impl PartialEq for NamespaceKey {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public
    }
}

impl Eq for NamespaceKey {}

impl fmt::Debug for NamespaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NamespaceKey")
            .field("public", &self.public)
            .field("private", &self.signing.is_some())
            .finish()
    }
}

pub fn generate_namespace(seed: Option<[u8; 32]>) -> NamespaceKey {
    NamespaceKey::generate(seed)
}
