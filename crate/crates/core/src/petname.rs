//! Local petname table: human-readable aliases for public keys.
//!
//! Petnames never leave the local data directory; every wire format uses keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::keys::PublicKey;

pub fn is_valid_petname(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PetnameTable {
    names: BTreeMap<String, PublicKey>,
}

impl PetnameTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, key: PublicKey) -> Option<PublicKey> {
        self.names.insert(name.into(), key)
    }

    pub fn get(&self, name: &str) -> Option<PublicKey> {
        self.names.get(name).copied()
    }

    pub fn name_of(&self, key: &PublicKey) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, k)| *k == key)
            .map(|(n, _)| n.as_str())
    }

    /// Accepts either a petname or a 64-digit hex key.
    pub fn lookup(&self, name_or_hex: &str) -> Option<PublicKey> {
        self.get(name_or_hex)
            .or_else(|| PublicKey::from_hex(name_or_hex).ok())
    }

    /// Petname if known, else full hex.
    pub fn display(&self, key: &PublicKey) -> String {
        self.name_of(key)
            .map(str::to_owned)
            .unwrap_or_else(|| key.to_hex())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PublicKey)> {
        self.names.iter().map(|(n, k)| (n.as_str(), k))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
