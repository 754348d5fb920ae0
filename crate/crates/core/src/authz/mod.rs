//! Policy-based authorization on top of discovery.
//!
//! A verifier `V` protects resources with policies: sets of attributes that
//! `V` itself issues. To get access, a subject fetches the policy together
//! with a fresh nonce, picks credentials with [`collect`](crate::credential::collect),
//! signs them with the nonce and sends them back. The verifier checks the
//! signature and nonce, then runs discovery itself for every policy
//! attribute. Access is granted only if every attribute has a chain.
//!
//! [`server`] exposes the verifier over HTTP, [`client`] is the subject side.

pub mod client;
pub mod server;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{put_str16, put_u32};
use crate::credential::Credential;
use crate::discovery::{discover, DelegationChain, DiscoveryError, Limits};
use crate::keys::{KeyError, NamespaceKey, PublicKey, Signature};
use crate::netsim::NameSystemBackend;
use crate::petname::PetnameTable;
use crate::record::Label;
use crate::time::Timestamp;

pub const AUTHZ_CONTEXT: &[u8] = b"ABD-AUTHZ-V1";
pub const NONCE_LIFETIME: Duration = Duration::from_secs(120);

pub type Nonce = [u8; 16];

#[derive(Debug, Error)]
pub enum AuthzError {
    #[error("unknown resource {0:?}")]
    UnknownResource(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    /// Discovery could not finish; the decision is unknown.
    #[error("no decision: {0}")]
    Discovery(#[from] DiscoveryError),
    #[error("credential collection incomplete: {0}")]
    Collection(#[from] crate::credential::CollectionIncomplete),
    #[error("subject key: {0}")]
    Key(#[from] KeyError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

mod hex_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &super::Nonce, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<super::Nonce, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(&text)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| serde::de::Error::custom("nonce must be 32 hex digits"))
    }
}

/// `P`: the attributes a resource requires, all issued by the verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub resource_id: String,
    pub attributes: Vec<Label>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyStore {
    policies: BTreeMap<String, Policy>,
}

impl PolicyStore {
    /// Parses a JSON object mapping resource ids to attribute lists.
    pub fn from_json(text: &str) -> Result<Self, AuthzError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| AuthzError::InvalidPolicy(e.to_string()))?;
        let mut store = PolicyStore::default();
        for (id, attrs) in raw {
            store.insert(&id, &attrs.iter().map(String::as_str).collect::<Vec<_>>())?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, AuthzError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AuthzError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, resource_id: &str, attributes: &[&str]) -> Result<(), AuthzError> {
        if attributes.is_empty() {
            return Err(AuthzError::InvalidPolicy(format!(
                "{resource_id}: no attributes"
            )));
        }
        let mut labels: Vec<Label> = Vec::new();
        for a in attributes {
            let l = Label::new(*a).map_err(|_| {
                AuthzError::InvalidPolicy(format!("{resource_id}: invalid label {a:?}"))
            })?;
            if labels.contains(&l) {
                return Err(AuthzError::InvalidPolicy(format!(
                    "{resource_id}: duplicate attribute {a}"
                )));
            }
            labels.push(l);
        }
        self.policies.insert(
            resource_id.to_owned(),
            Policy {
                resource_id: resource_id.to_owned(),
                attributes: labels,
            },
        );
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, Vec<&str>> = self
            .policies
            .iter()
            .map(|(id, p)| {
                (
                    id.as_str(),
                    p.attributes.iter().map(Label::as_str).collect(),
                )
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("policy map serializes")
    }

    pub fn get_policy(&self, resource_id: &str) -> Result<&Policy, AuthzError> {
        self.policies
            .get(resource_id)
            .ok_or_else(|| AuthzError::UnknownResource(resource_id.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }
}

/// The subject's answer to a challenge: `C_P` per attribute, signed
/// together with the nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationResponse {
    #[serde(with = "hex_nonce")]
    pub nonce: Nonce,
    pub subject: PublicKey,
    pub credential_sets: BTreeMap<Label, Vec<Credential>>,
    pub subject_signature: Signature,
}

impl AuthorizationResponse {
    pub fn signing_input(
        nonce: &Nonce,
        subject: &PublicKey,
        sets: &BTreeMap<Label, Vec<Credential>>,
    ) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(AUTHZ_CONTEXT);
        out.extend_from_slice(nonce);
        out.extend_from_slice(subject.as_bytes());
        put_u32(&mut out, sets.len() as u32);
        for (attr, creds) in sets {
            put_str16(&mut out, attr.as_str());
            put_u32(&mut out, creds.len() as u32);
            for c in creds {
                let payload = c.to_payload();
                put_u32(&mut out, payload.len() as u32);
                out.extend_from_slice(&payload);
            }
        }
        out
    }

    pub fn sign(
        subject: &NamespaceKey,
        nonce: Nonce,
        credential_sets: BTreeMap<Label, Vec<Credential>>,
    ) -> Result<Self, KeyError> {
        let pk = subject.public_key();
        let subject_signature =
            subject.sign(&Self::signing_input(&nonce, &pk, &credential_sets))?;
        Ok(AuthorizationResponse {
            nonce,
            subject: pk,
            credential_sets,
            subject_signature,
        })
    }

    pub fn signature_valid(&self) -> bool {
        let msg = Self::signing_input(&self.nonce, &self.subject, &self.credential_sets);
        self.subject.verify(&msg, &self.subject_signature)
    }

    /// All supplied credentials, deduplicated.
    pub fn all_credentials(&self) -> Vec<Credential> {
        let mut all: Vec<Credential> = self.credential_sets.values().flatten().cloned().collect();
        all.sort();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// One chain per policy attribute, in policy order.
    Grant {
        chains: Vec<DelegationChain>,
    },
    Deny {
        reasons: Vec<String>,
    },
}

impl Decision {
    pub fn is_grant(&self) -> bool {
        matches!(self, Decision::Grant { .. })
    }
}

/// The verifier's decision for a response whose nonce has already been
/// checked. Discovery failures are errors, never denials.
pub fn authorize(
    verifier_pub: &PublicKey,
    response: &AuthorizationResponse,
    policy: &Policy,
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: &Limits,
) -> Result<Decision, AuthzError> {
    if !response.signature_valid() {
        return Ok(Decision::Deny {
            reasons: vec!["signature: response signature does not verify".into()],
        });
    }
    let supplied = response.all_credentials();
    let mut reasons = Vec::new();
    for c in &supplied {
        if c.subject != response.subject {
            reasons.push(format!(
                "credential {}: issued to another subject",
                c.render()
            ));
        } else if !c.verify(clock) {
            reasons.push(format!("credential {}: invalid or expired", c.render()));
        }
    }
    if !reasons.is_empty() {
        return Ok(Decision::Deny { reasons });
    }
    let mut chains = Vec::new();
    for attr in &policy.attributes {
        match discover(
            verifier_pub,
            attr,
            &response.subject,
            &supplied,
            backend,
            clock,
            limits,
        )? {
            Some(chain) => chains.push(chain),
            None => reasons.push(format!(
                "{attr}: no delegation chain to the supplied credentials"
            )),
        }
    }
    if reasons.is_empty() {
        Ok(Decision::Grant { chains })
    } else {
        Ok(Decision::Deny { reasons })
    }
}

/// A policy plus the nonce the answer must carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub policy: Policy,
    #[serde(with = "hex_nonce")]
    pub nonce: Nonce,
    pub verifier: PublicKey,
}

struct IssuedNonce {
    resource_id: String,
    issued: Timestamp,
}

/// Verifier state: its namespace key, its policies and the outstanding
/// nonces. Each nonce is bound to one resource and accepted once within
/// [`NONCE_LIFETIME`].
pub struct Verifier {
    verifier_pub: PublicKey,
    policies: PolicyStore,
    nonces: Mutex<HashMap<Nonce, IssuedNonce>>,
    pub limits: Limits,
    pub names: PetnameTable,
}

impl Verifier {
    pub fn new(verifier_pub: PublicKey, policies: PolicyStore) -> Self {
        Verifier {
            verifier_pub,
            policies,
            nonces: Mutex::new(HashMap::new()),
            limits: Limits::default(),
            names: PetnameTable::new(),
        }
    }

    pub fn verifier_pub(&self) -> PublicKey {
        self.verifier_pub
    }

    pub fn policies(&self) -> &PolicyStore {
        &self.policies
    }

    pub fn challenge(&self, resource_id: &str, clock: Timestamp) -> Result<Challenge, AuthzError> {
        let policy = self.policies.get_policy(resource_id)?.clone();
        let nonce: Nonce = rand::random();
        let mut table = self.nonces.lock().expect("nonce table poisoned");
        table.retain(|_, n| n.issued.saturating_add(NONCE_LIFETIME) > clock);
        table.insert(
            nonce,
            IssuedNonce {
                resource_id: resource_id.to_owned(),
                issued: clock,
            },
        );
        Ok(Challenge {
            policy,
            nonce,
            verifier: self.verifier_pub,
        })
    }

    fn take_nonce(&self, nonce: &Nonce, resource_id: &str, clock: Timestamp) -> bool {
        let mut table = self.nonces.lock().expect("nonce table poisoned");
        match table.remove(nonce) {
            Some(n) => {
                n.resource_id == resource_id && n.issued.saturating_add(NONCE_LIFETIME) > clock
            }
            None => false,
        }
    }

    /// Checks the response signature, consumes the nonce and decides.
    pub fn authorize(
        &self,
        resource_id: &str,
        response: &AuthorizationResponse,
        backend: &mut dyn NameSystemBackend,
        clock: Timestamp,
    ) -> Result<Decision, AuthzError> {
        let policy = self.policies.get_policy(resource_id)?;
        if !response.signature_valid() {
            return Ok(Decision::Deny {
                reasons: vec!["signature: response signature does not verify".into()],
            });
        }
        if !self.take_nonce(&response.nonce, resource_id, clock) {
            return Ok(Decision::Deny {
                reasons: vec!["replay: nonce unknown, expired or already used".into()],
            });
        }
        authorize(
            &self.verifier_pub,
            response,
            policy,
            backend,
            clock,
            &self.limits,
        )
    }
}

/// One line per chain: the records it walks through and the credentials it
/// ends in.
pub fn chain_summary(chain: &DelegationChain, names: &PetnameTable) -> String {
    let steps: Vec<String> = chain
        .steps()
        .iter()
        .map(|s| {
            format!(
                "{}.{} <- {}",
                names.display(&s.namespace),
                s.label,
                s.record.render(names)
            )
        })
        .collect();
    let leaves: Vec<String> = chain
        .leaves()
        .iter()
        .map(|c| format!("{}.{}", names.display(&c.issuer), c.attribute))
        .collect();
    format!(
        "{}.{}: {} [credentials: {}]",
        names.display(&chain.issuer),
        chain.attribute,
        steps.join("; "),
        leaves.join(", ")
    )
}
