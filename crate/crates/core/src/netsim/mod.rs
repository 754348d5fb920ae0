//! The name-system substrate.
//!
//! [`NameSystemBackend`] is the put/get contract every substrate honours:
//! anyone may read, but a put is accepted only when the record set is signed
//! by the namespace owner and stored under the matching query key. Reads only
//! ever return verified, unexpired sets.
//!
//! Implementations: [`MemoryBackend`] (a map), [`DirectoryBackend`] (the same
//! map persisted as files, used by the CLI) and [`SimulatedDht`] (a replicated
//! ring with response caching, latency accounting and node failures).
//! [`resolve`] is the resolver entry point used by discovery.

mod dht;
mod memory;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dht::{DhtConfig, NodeId, SimulatedDht};
pub use memory::{DirectoryBackend, MemoryBackend, RecordingBackend};

use crate::keys::PublicKey;
use crate::record::{Expiration, Label, RecordSet, RecordType, ResourceRecord};
use crate::time::Timestamp;

/// 256-bit DHT key of a (namespace, label) pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryKey(pub [u8; 32]);

impl QueryKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok()?.try_into().ok().map(QueryKey)
    }
}

impl fmt::Debug for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QueryKey({})", hex::encode(&self.0[..6]))
    }
}

/// SHA-256 of `namespace_pub || 0x00 || label`.
pub fn derive_query_key(namespace_pub: &PublicKey, label: &Label) -> QueryKey {
    let mut h = Sha256::new();
    h.update(namespace_pub.as_bytes());
    h.update([0u8]);
    h.update(label.as_str().as_bytes());
    QueryKey(h.finalize().into())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupStats {
    pub lookups: u64,
    pub cache_hits: u64,
    pub messages: u64,
    pub max_hops: u64,
    /// Copies dropped because their signature did not verify.
    pub rejected: u64,
    pub puts: u64,
    /// Simulated network time spent on lookups.
    pub latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("name system unavailable: {0}")]
    Unavailable(String),
    #[error("all replicas of {0:?} are down")]
    AllReplicasDown(QueryKey),
    #[error("only copies with invalid signatures were found")]
    BadSignature,
    #[error("put rejected: {0}")]
    Rejected(String),
}

impl BackendError {
    /// Timeout-class failures: the answer is unknown, not negative.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            BackendError::Unavailable(_) | BackendError::AllReplicasDown(_)
        )
    }
}

pub trait NameSystemBackend {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError>;

    /// `Ok(None)` means no set is stored (or it has expired).
    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError>;

    fn stats(&self) -> LookupStats;
}

impl<B: NameSystemBackend + ?Sized> NameSystemBackend for Box<B> {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        (**self).put(key, set)
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        (**self).get(key, clock)
    }

    fn stats(&self) -> LookupStats {
        (**self).stats()
    }
}

/// The owner-only update rule, checked by every backend on put.
pub fn validate_put(key: &QueryKey, set: &RecordSet) -> Result<(), BackendError> {
    if derive_query_key(&set.owner(), set.label()) != *key {
        return Err(BackendError::Rejected(
            "query key does not match owner and label".into(),
        ));
    }
    if !set.verify_signature(&set.owner()) {
        return Err(BackendError::Rejected("bad signature".into()));
    }
    if set
        .records()
        .iter()
        .any(|r| matches!(r.expiration, Expiration::Relative(_)))
    {
        return Err(BackendError::Rejected(
            "relative expiration must be stamped before publishing".into(),
        ));
    }
    Ok(())
}

/// Whether a stored set may be served at `clock`: the signature holds and
/// the earliest record expiration lies in the future.
pub(crate) fn servable(set: &RecordSet, clock: Timestamp) -> bool {
    set.verify_signature(&set.owner()) && set.expiration().is_none_or(|t| t > clock)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("no record set found")]
    NotFound,
    #[error("all replicas unreachable")]
    AllReplicasDown,
    #[error("name system unavailable: {0}")]
    Unavailable(String),
    #[error("record set failed verification")]
    BadSignature,
}

impl ResolveError {
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            ResolveError::AllReplicasDown | ResolveError::Unavailable(_)
        )
    }
}

/// Resolves the records of `record_type` stored under `label` in namespace
/// `namespace_pub`. An existing but empty set yields `Ok(vec![])`; a missing
/// one yields `NotFound`.
pub fn resolve(
    label: &str,
    namespace_pub: &PublicKey,
    record_type: RecordType,
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
) -> Result<Vec<ResourceRecord>, ResolveError> {
    let label = Label::new(label).map_err(|_| ResolveError::NotFound)?;
    let key = derive_query_key(namespace_pub, &label);
    let set = match backend.get(&key, clock) {
        Ok(Some(set)) => set,
        Ok(None) => return Err(ResolveError::NotFound),
        Err(BackendError::AllReplicasDown(_)) => return Err(ResolveError::AllReplicasDown),
        Err(BackendError::Unavailable(s)) => return Err(ResolveError::Unavailable(s)),
        Err(BackendError::BadSignature) | Err(BackendError::Rejected(_)) => {
            return Err(ResolveError::BadSignature)
        }
    };
    if set.owner() != *namespace_pub
        || set.label() != &label
        || !set.verify_signature(namespace_pub)
    {
        return Err(ResolveError::BadSignature);
    }
    Ok(set
        .records()
        .iter()
        .filter(|r| r.record_type == record_type && !r.is_expired(clock))
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::generate_namespace;

    #[test]
    fn query_keys_are_deterministic_and_distinct() {
        let pk1 = generate_namespace(Some([1; 32])).public_key();
        let pk2 = generate_namespace(Some([2; 32])).public_key();
        let nado: Label = "nado".parse().unwrap();
        let dco: Label = "dco".parse().unwrap();
        assert_eq!(derive_query_key(&pk1, &nado), derive_query_key(&pk1, &nado));
        assert_ne!(derive_query_key(&pk1, &nado), derive_query_key(&pk1, &dco));
        assert_ne!(derive_query_key(&pk1, &nado), derive_query_key(&pk2, &nado));
    }

    #[test]
    fn query_key_golden() {
        // computed independently: sha256(pk || 0x00 || "nado"), all-zero seed key
        let pk = generate_namespace(Some([0; 32])).public_key();
        assert_eq!(
            derive_query_key(&pk, &"nado".parse().unwrap()).to_hex(),
            "1d4603c2931b17bb5177c2abfbd6bc247ad23fd0690b86aee6e006c5f912cf4b"
        );
    }
}
