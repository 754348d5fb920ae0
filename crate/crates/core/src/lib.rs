//! # abd-core
//!
//! Attribute-based delegation (ABD) on top of a signed, pluggable name system.
//!
//! Issuers publish `ATTR` records in their own cryptographic namespaces.
//! Each record holds one delegation expression `A.a <- e`. Subjects keep
//! signed credentials (`CRED` records) locally and never publish them. A
//! verifier decides access by discovering a delegation chain from its own
//! policy attribute down to a subset of the subject's credentials, resolving
//! records through the name system as it goes.
//!
//! ## Layout
//!
//! - [`keys`], [`record`]: namespace identities, resource records, canonical
//!   serialization and Ed25519 signing of record sets.
//! - [`namestore`]: locally owned namespaces, on-disk persistence, publishing.
//! - [`netsim`]: the name-system backend interface, an in-memory map, a
//!   directory-backed map and a simulated replicated DHT with caching.
//! - [`delegation`]: the `ATTR` payload model and delegation management.
//! - [`credential`]: `CRED` credentials, JSON transfer and `collect`.
//! - [`discovery`]: delegation chain discovery, chain verification and the
//!   reference fixpoint used as a test oracle.
//! - [`authz`]: policies and the challenge/response authorization protocol,
//!   including the HTTP verifier service and client.
//! - [`scenario`]: the built-in anti-doping fixture.
//! - [`generator`]: seeded random delegation instances for property tests.

pub mod authz;
pub mod codec;
pub mod credential;
pub mod delegation;
pub mod discovery;
pub mod generator;
pub mod keys;
pub mod namestore;
pub mod netsim;
pub mod petname;
pub mod record;
pub mod scenario;
pub mod time;

pub use credential::Credential;
pub use delegation::{AttributeTrail, DelegationExpression, DelegationSetEntry, DelegationType};
pub use discovery::{discover, verify_chain, DelegationChain, Limits};
pub use keys::{generate_namespace, NamespaceKey, PublicKey, Signature};
pub use namestore::{NameStore, Namespace};
pub use netsim::{
    derive_query_key, resolve, MemoryBackend, NameSystemBackend, QueryKey, SimulatedDht,
};
pub use petname::PetnameTable;
pub use record::{Expiration, Label, RecordSet, RecordType, ResourceRecord};
pub use time::Timestamp;
