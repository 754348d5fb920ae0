//! `CRED` credentials: signed assertions `Issuer.attribute <- Subject`.
//!
//! Credentials are held by their subject. They live as `CRED` records in the
//! subject's own namestore (never published) and travel as JSON. The
//! subject-side [`collect`] picks the credentials that satisfy a verifier's
//! policy.
//!
//! Payload layout (big-endian):
//!
//! ```text
//! issuer [32] | subject [32] | expiration u64 | attr_len u16 | attribute | signature [64]
//! ```

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{put_str16, put_u64, DecodeError, Reader};
use crate::discovery::{discover, DiscoveryError, Limits};
use crate::keys::{NamespaceKey, PublicKey, Signature};
use crate::namestore::{Namespace, StoreError};
use crate::netsim::NameSystemBackend;
use crate::record::{is_valid_label, Expiration, Label, RecordType, ResourceRecord};
use crate::time::Timestamp;

pub const CRED_CONTEXT: &[u8] = b"ABD-CRED-V1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credential {
    pub issuer: PublicKey,
    pub subject: PublicKey,
    pub attribute: Label,
    #[serde(rename = "expiration_us")]
    pub expiration: Timestamp,
    pub signature: Signature,
}

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("issuer namespace has no private key")]
    MissingPrivateKey,
    #[error("invalid attribute label {0:?}")]
    InvalidLabel(String),
    #[error("credential JSON: {0}")]
    Json(String),
    #[error("credential signature does not verify")]
    BadSignature,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl Credential {
    pub fn signing_input(
        issuer: &PublicKey,
        subject: &PublicKey,
        expiration: Timestamp,
        attribute: &Label,
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(CRED_CONTEXT.len() + 72 + attribute.as_str().len());
        out.extend_from_slice(CRED_CONTEXT);
        out.extend_from_slice(issuer.as_bytes());
        out.extend_from_slice(subject.as_bytes());
        put_u64(&mut out, expiration.as_micros());
        out.extend_from_slice(attribute.as_str().as_bytes());
        out
    }

    pub fn signature_valid(&self) -> bool {
        let msg = Self::signing_input(
            &self.issuer,
            &self.subject,
            self.expiration,
            &self.attribute,
        );
        self.issuer.verify(&msg, &self.signature)
    }

    /// Signature holds and the credential has not expired at `clock`.
    pub fn verify(&self, clock: Timestamp) -> bool {
        self.expiration > clock && self.signature_valid()
    }

    /// `Issuer.attribute <- Subject` with short keys.
    pub fn render(&self) -> String {
        format!(
            "{}.{} <- {}",
            self.issuer.short(),
            self.attribute,
            self.subject.short()
        )
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 32 + 8 + 2 + self.attribute.as_str().len() + 64);
        out.extend_from_slice(self.issuer.as_bytes());
        out.extend_from_slice(self.subject.as_bytes());
        put_u64(&mut out, self.expiration.as_micros());
        put_str16(&mut out, self.attribute.as_str());
        out.extend_from_slice(self.signature.as_bytes());
        out
    }

    pub fn to_record(&self) -> ResourceRecord {
        ResourceRecord::new(
            RecordType::Cred,
            Expiration::Absolute(self.expiration),
            self.to_payload(),
        )
    }

    pub fn from_record(record: &ResourceRecord) -> Result<Self, DecodeError> {
        if record.record_type != RecordType::Cred {
            return Err(DecodeError::new(0, "not a CRED record"));
        }
        decode_cred_payload(&record.payload)
    }
}

pub fn encode_cred_payload(cred: &Credential) -> Vec<u8> {
    cred.to_payload()
}

/// Parses a `CRED` payload. The signature is not checked here.
pub fn decode_cred_payload(bytes: &[u8]) -> Result<Credential, DecodeError> {
    let mut r = Reader::new(bytes);
    let issuer = PublicKey::from_bytes(r.array()?);
    let subject = PublicKey::from_bytes(r.array()?);
    let expiration = Timestamp(r.u64()?);
    let at = r.offset();
    let len = r.u16()? as usize;
    let raw = r.bytes(len)?;
    let attribute = std::str::from_utf8(raw)
        .ok()
        .filter(|s| is_valid_label(s))
        .and_then(|s| Label::new(s).ok())
        .ok_or_else(|| DecodeError::new(at, "invalid attribute label"))?;
    let signature = Signature::from_bytes(r.array()?);
    r.finish()?;
    Ok(Credential {
        issuer,
        subject,
        attribute,
        expiration,
        signature,
    })
}

/// Issues `issuer.attribute <- subject` expiring at `clock + lifetime`.
pub fn issue_credential(
    issuer: &NamespaceKey,
    subject: PublicKey,
    attribute: &str,
    lifetime: Duration,
    clock: Timestamp,
) -> Result<Credential, CredentialError> {
    let attribute =
        Label::new(attribute).map_err(|_| CredentialError::InvalidLabel(attribute.to_owned()))?;
    if !issuer.has_private() {
        return Err(CredentialError::MissingPrivateKey);
    }
    let expiration = clock.saturating_add(lifetime);
    let issuer_pub = issuer.public_key();
    let msg = Credential::signing_input(&issuer_pub, &subject, expiration, &attribute);
    let signature = issuer
        .sign(&msg)
        .map_err(|_| CredentialError::MissingPrivateKey)?;
    Ok(Credential {
        issuer: issuer_pub,
        subject,
        attribute,
        expiration,
        signature,
    })
}

pub fn verify_credential(cred: &Credential, clock: Timestamp) -> bool {
    cred.verify(clock)
}

pub fn export_json(cred: &Credential) -> String {
    serde_json::to_string_pretty(cred).expect("credential serializes")
}

/// Parses one credential and re-checks its signature (not its expiry).
pub fn import_json(text: &str) -> Result<Credential, CredentialError> {
    let cred: Credential =
        serde_json::from_str(text).map_err(|e| CredentialError::Json(e.to_string()))?;
    if !cred.signature_valid() {
        return Err(CredentialError::BadSignature);
    }
    Ok(cred)
}

/// Parses either a single credential object or an array of them.
pub fn import_json_many(text: &str) -> Result<Vec<Credential>, CredentialError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CredentialError::Json(e.to_string()))?;
    let creds: Vec<Credential> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|c| vec![c]),
    }
    .map_err(|e| CredentialError::Json(e.to_string()))?;
    if creds.iter().any(|c| !c.signature_valid()) {
        return Err(CredentialError::BadSignature);
    }
    Ok(creds)
}

/// Keeps `cred` as a `CRED` record under its attribute label in the
/// subject's namespace. Storing the same credential twice is a no-op.
pub fn store_credential(
    subject_ns: &mut Namespace,
    cred: &Credential,
) -> Result<(), CredentialError> {
    let record = cred.to_record();
    let mut records = subject_ns
        .get(&cred.attribute)
        .map(|s| s.records().to_vec())
        .unwrap_or_default();
    if records.contains(&record) {
        return Ok(());
    }
    records.push(record);
    subject_ns.store(cred.attribute.as_str(), records)?;
    Ok(())
}

/// Drops the credentials `issuer.attribute` kept in the subject's
/// namespace. Returns how many were removed.
pub fn remove_credential(
    subject_ns: &mut Namespace,
    issuer: &PublicKey,
    attribute: &Label,
) -> Result<usize, CredentialError> {
    let Some(set) = subject_ns.get(attribute) else {
        return Ok(0);
    };
    let (gone, kept): (Vec<ResourceRecord>, Vec<ResourceRecord>) =
        set.records().iter().cloned().partition(|r| {
            r.record_type == RecordType::Cred
                && Credential::from_record(r).is_ok_and(|c| c.issuer == *issuer)
        });
    if gone.is_empty() {
        return Ok(0);
    }
    if kept.is_empty() {
        subject_ns.remove(attribute.as_str())?;
    } else {
        subject_ns.store(attribute.as_str(), kept)?;
    }
    Ok(gone.len())
}

/// All credentials held in `ns`, undecodable records skipped.
pub fn stored_credentials(ns: &Namespace) -> Vec<Credential> {
    ns.list()
        .flat_map(|(_, set)| set.records())
        .filter(|r| r.record_type == RecordType::Cred)
        .filter_map(|r| Credential::from_record(r).ok())
        .collect()
}

/// Result of [`collect`]: `C_{V.x}` per satisfied policy attribute, plus the
/// attributes no chain was found for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collection {
    pub per_attribute: BTreeMap<Label, Vec<Credential>>,
    pub unsatisfied: Vec<Label>,
}

impl Collection {
    /// `C_P`, the union over all attributes, deduplicated.
    pub fn union(&self) -> Vec<Credential> {
        let mut all: Vec<Credential> = self.per_attribute.values().flatten().cloned().collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn is_complete(&self) -> bool {
        self.unsatisfied.is_empty()
    }
}

#[derive(Debug, Error)]
#[error("credential collection incomplete for {attribute}: {source}")]
pub struct CollectionIncomplete {
    pub attribute: Label,
    #[source]
    pub source: DiscoveryError,
}

/// Subject-side selection of the credentials that satisfy `policy_attrs`
/// for `verifier_pub`. Only credentials naming `subject_pub` that verify at
/// `clock` are considered.
pub fn collect(
    subject_creds: &[Credential],
    subject_pub: &PublicKey,
    verifier_pub: &PublicKey,
    policy_attrs: &[Label],
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: &Limits,
) -> Result<Collection, CollectionIncomplete> {
    let usable: Vec<Credential> = subject_creds
        .iter()
        .filter(|c| c.subject == *subject_pub && c.verify(clock))
        .cloned()
        .collect();
    let mut out = Collection::default();
    for attr in policy_attrs {
        match discover(
            verifier_pub,
            attr,
            subject_pub,
            &usable,
            backend,
            clock,
            limits,
        ) {
            Ok(Some(chain)) => {
                out.per_attribute.insert(attr.clone(), chain.leaves());
            }
            Ok(None) => out.unsatisfied.push(attr.clone()),
            Err(source) => {
                return Err(CollectionIncomplete {
                    attribute: attr.clone(),
                    source,
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::generate_namespace;
    use proptest::prelude::*;

    const T0: Timestamp = Timestamp(1_700_000_000_000_000);

    fn issuer() -> NamespaceKey {
        generate_namespace(Some([2; 32]))
    }

    fn bob() -> PublicKey {
        generate_namespace(Some([3; 32])).public_key()
    }

    fn sample() -> Credential {
        issue_credential(&issuer(), bob(), "employee", Duration::from_secs(3600), T0).unwrap()
    }

    #[test]
    fn issue_and_verify() {
        let c = sample();
        assert_eq!(c.expiration, T0.saturating_add(Duration::from_secs(3600)));
        assert!(c.verify(T0));
        assert!(!c.verify(c.expiration));
    }

    #[test]
    fn remove_keeps_other_issuers() {
        let other = generate_namespace(Some([4; 32]));
        let mut ns = Namespace::new(generate_namespace(Some([3; 32])), None);
        let a = sample();
        let b = issue_credential(&other, bob(), "employee", Duration::from_secs(60), T0).unwrap();
        store_credential(&mut ns, &a).unwrap();
        store_credential(&mut ns, &b).unwrap();
        let label = Label::new("employee").unwrap();
        assert_eq!(
            remove_credential(&mut ns, &issuer().public_key(), &label).unwrap(),
            1
        );
        assert_eq!(stored_credentials(&ns), vec![b]);
        assert_eq!(
            remove_credential(&mut ns, &issuer().public_key(), &label).unwrap(),
            0
        );
        assert_eq!(
            remove_credential(&mut ns, &other.public_key(), &label).unwrap(),
            1
        );
        assert!(ns.get(&label).is_none());
        assert_eq!(ns.withdrawn().count(), 0);
    }

    #[test]
    fn zero_lifetime_is_expired() {
        let c = issue_credential(&issuer(), bob(), "dco", Duration::ZERO, T0).unwrap();
        assert!(c.signature_valid());
        assert!(!c.verify(Timestamp(T0.0 + 1)));
    }

    #[test]
    fn issue_errors() {
        assert!(matches!(
            issue_credential(&issuer().public_only(), bob(), "dco", Duration::ZERO, T0),
            Err(CredentialError::MissingPrivateKey)
        ));
        assert!(matches!(
            issue_credential(&issuer(), bob(), "Bad Label", Duration::ZERO, T0),
            Err(CredentialError::InvalidLabel(_))
        ));
    }

    #[test]
    fn tampering_breaks_signature() {
        let mut c = sample();
        c.attribute = "controller".parse().unwrap();
        assert!(!c.verify(T0));
        let mut c = sample();
        c.subject = issuer().public_key();
        assert!(!c.verify(T0));
        let mut c = sample();
        c.expiration = Timestamp(c.expiration.0 + 1);
        assert!(!c.verify(T0));
    }

    #[test]
    fn json_round_trip_and_field_names() {
        let c = sample();
        let text = export_json(&c);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "attribute",
                "expiration_us",
                "issuer",
                "signature",
                "subject"
            ]
        );
        assert_eq!(v["expiration_us"], c.expiration.as_micros());
        assert_eq!(import_json(&text).unwrap(), c);
    }

    #[test]
    fn json_import_rejects_altered_attribute() {
        let text = export_json(&sample()).replace("\"employee\"", "\"controller\"");
        assert!(matches!(
            import_json(&text),
            Err(CredentialError::BadSignature)
        ));
    }

    #[test]
    fn json_import_names_missing_field() {
        let mut v: serde_json::Value = serde_json::from_str(&export_json(&sample())).unwrap();
        v.as_object_mut().unwrap().remove("subject");
        match import_json(&v.to_string()) {
            Err(CredentialError::Json(msg)) => assert!(msg.contains("subject"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn import_many_accepts_object_or_array() {
        let c = sample();
        assert_eq!(import_json_many(&export_json(&c)).unwrap(), vec![c.clone()]);
        let arr = serde_json::to_string(&vec![c.clone(), c.clone()]).unwrap();
        assert_eq!(import_json_many(&arr).unwrap().len(), 2);
    }

    #[test]
    fn store_and_list_in_namespace() {
        let mut ns = Namespace::new(generate_namespace(Some([3; 32])), Some("Bob".into()));
        let c = sample();
        store_credential(&mut ns, &c).unwrap();
        store_credential(&mut ns, &c).unwrap();
        let other =
            issue_credential(&issuer(), bob(), "controller", Duration::from_secs(60), T0).unwrap();
        store_credential(&mut ns, &other).unwrap();
        let mut got = stored_credentials(&ns);
        got.sort();
        let mut want = vec![c, other];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn payload_rejects_bad_label_and_trailing_bytes() {
        let mut p = sample().to_payload();
        p.push(0);
        assert!(decode_cred_payload(&p).is_err());
        let mut p = sample().to_payload();
        p[74] = b'E';
        assert_eq!(decode_cred_payload(&p).unwrap_err().offset, 72);
    }

    proptest! {
        #[test]
        fn payload_round_trip(seed in any::<[u8; 32]>(), attr in "[a-z0-9_-]{1,63}", life in 0u64..1_000_000) {
            let k = generate_namespace(Some(seed));
            let c = issue_credential(&k, bob(), &attr, Duration::from_micros(life), T0).unwrap();
            let back = decode_cred_payload(&c.to_payload()).unwrap();
            prop_assert!(back.signature_valid());
            prop_assert_eq!(back, c);
        }
    }
}
