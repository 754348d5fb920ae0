//! Resource records, record sets and their canonical, signed wire format.
//!
//! Record layout (big-endian):
//!
//! ```text
//! record_type u32 | flags u32 (bit 0 = relative expiration) | expiration u64 | payload_len u32 | payload
//! ```
//!
//! Record set layout:
//!
//! ```text
//! "ABD-RRSET-V1" | public_key [32] | label_len u16 | label | record_count u32 | records (sorted) | signature [64]
//! ```
//!
//! The signature covers every byte before it.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{put_str16, put_u32, put_u64, DecodeError, Reader};
use crate::keys::{KeyError, NamespaceKey, PublicKey, Signature};
use crate::time::{duration_micros, Timestamp};

pub const RRSET_CONTEXT: &[u8] = b"ABD-RRSET-V1";
pub const MAX_LABEL_LEN: usize = 63;

const FLAG_RELATIVE: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("namespace has no private key")]
    MissingPrivateKey,
    #[error("invalid label {0:?}: must match [a-z0-9_-]{{1,63}}")]
    InvalidLabel(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("malformed record set: {0}")]
    Malformed(String),
}

impl From<KeyError> for RecordError {
    fn from(e: KeyError) -> Self {
        match e {
            KeyError::MissingPrivateKey => RecordError::MissingPrivateKey,
            KeyError::InvalidHex(s) => RecordError::Malformed(s),
        }
    }
}

/// A record name. Also the name of an attribute.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(s: impl Into<String>) -> Result<Self, RecordError> {
        let s = s.into();
        if is_valid_label(&s) {
            Ok(Label(s))
        } else {
            Err(RecordError::InvalidLabel(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_valid_label(s: &str) -> bool {
    (1..=MAX_LABEL_LEN).contains(&s.len())
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

impl TryFrom<String> for Label {
    type Error = RecordError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Label::new(s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0
    }
}

impl FromStr for Label {
    type Err = RecordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::new(s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RecordType {
    Attr,
    Cred,
}

impl RecordType {
    pub const fn code(self) -> u32 {
        match self {
            RecordType::Attr => 1,
            RecordType::Cred => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(RecordType::Attr),
            2 => Some(RecordType::Cred),
            _ => None,
        }
    }
}

impl FromStr for RecordType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ATTR" => Ok(RecordType::Attr),
            "CRED" => Ok(RecordType::Cred),
            other => Err(format!("unknown record type {other:?}")),
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordType::Attr => "ATTR",
            RecordType::Cred => "CRED",
        })
    }
}

/// Either an absolute deadline or a lifetime that is stamped absolute when
/// the record is published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expiration {
    Absolute(Timestamp),
    Relative(Duration),
}

impl Expiration {
    /// The absolute deadline this expiration resolves to when published at `at`.
    pub fn stamp(self, at: Timestamp) -> Timestamp {
        match self {
            Expiration::Absolute(t) => t,
            Expiration::Relative(d) => at.saturating_add(d),
        }
    }

    pub fn absolute(self) -> Option<Timestamp> {
        match self {
            Expiration::Absolute(t) => Some(t),
            Expiration::Relative(_) => None,
        }
    }

    fn wire(self) -> (u32, u64) {
        match self {
            Expiration::Absolute(t) => (0, t.as_micros()),
            Expiration::Relative(d) => (FLAG_RELATIVE, duration_micros(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceRecord {
    pub record_type: RecordType,
    pub expiration: Expiration,
    pub payload: Vec<u8>,
}

impl ResourceRecord {
    pub fn new(record_type: RecordType, expiration: Expiration, payload: Vec<u8>) -> Self {
        ResourceRecord {
            record_type,
            expiration,
            payload,
        }
    }

    pub fn is_expired(&self, clock: Timestamp) -> bool {
        matches!(self.expiration, Expiration::Absolute(t) if t <= clock)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let (flags, exp) = self.expiration.wire();
        put_u32(out, self.record_type.code());
        put_u32(out, flags);
        put_u64(out, exp);
        put_u32(out, self.payload.len() as u32);
        out.extend_from_slice(&self.payload);
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.payload.len());
        self.encode_into(&mut out);
        out
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let code = r.u32()?;
        let record_type = RecordType::from_code(code)
            .ok_or_else(|| DecodeError::new(at, format!("unknown record type {code}")))?;
        let flags_at = r.offset();
        let flags = r.u32()?;
        if flags & !FLAG_RELATIVE != 0 {
            return Err(DecodeError::new(
                flags_at,
                format!("unknown flags {flags:#x}"),
            ));
        }
        let exp = r.u64()?;
        let expiration = if flags & FLAG_RELATIVE != 0 {
            Expiration::Relative(Duration::from_micros(exp))
        } else {
            Expiration::Absolute(Timestamp(exp))
        };
        let len = r.u32()? as usize;
        let payload = r.bytes(len)?.to_vec();
        Ok(ResourceRecord {
            record_type,
            expiration,
            payload,
        })
    }

    /// Checks that the payload decodes under its type's codec.
    pub fn validate_payload(&self) -> Result<(), DecodeError> {
        match self.record_type {
            RecordType::Attr => crate::delegation::decode_attr_payload(&self.payload).map(|_| ()),
            RecordType::Cred => crate::credential::decode_cred_payload(&self.payload).map(|_| ()),
        }
    }
}

fn canonical_order(records: &mut [ResourceRecord]) {
    records.sort_by_cached_key(|r| (r.payload.clone(), r.canonical_bytes()));
}

/// All records stored under one label of one namespace, signed by the owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSet {
    owner: PublicKey,
    label: Label,
    records: Vec<ResourceRecord>,
    signature: Signature,
}

impl RecordSet {
    pub fn sign(
        owner: &NamespaceKey,
        label: Label,
        mut records: Vec<ResourceRecord>,
    ) -> Result<Self, RecordError> {
        canonical_order(&mut records);
        let mut set = RecordSet {
            owner: owner.public_key(),
            label,
            records,
            signature: Signature([0u8; 64]),
        };
        set.signature = owner.sign(&set.signing_input())?;
        Ok(set)
    }

    pub fn owner(&self) -> PublicKey {
        self.owner
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn records(&self) -> &[ResourceRecord] {
        &self.records
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Earliest absolute expiration among the records; `None` for empty sets
    /// and sets holding only relative records.
    pub fn expiration(&self) -> Option<Timestamp> {
        self.records
            .iter()
            .filter_map(|r| r.expiration.absolute())
            .min()
    }

    /// Everything the signature covers.
    pub fn signing_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.records.len() * 64);
        out.extend_from_slice(RRSET_CONTEXT);
        out.extend_from_slice(self.owner.as_bytes());
        put_str16(&mut out, self.label.as_str());
        put_u32(&mut out, self.records.len() as u32);
        for r in &self.records {
            r.encode_into(&mut out);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signing_input();
        out.extend_from_slice(self.signature.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ctx = r.bytes(RRSET_CONTEXT.len())?;
        if ctx != RRSET_CONTEXT {
            return Err(DecodeError::new(0, "bad context tag"));
        }
        let owner = PublicKey::from_bytes(r.array()?);
        let label_at = r.offset();
        let len = r.u16()? as usize;
        let raw = r.bytes(len)?;
        let label = std::str::from_utf8(raw)
            .ok()
            .and_then(|s| Label::new(s).ok())
            .ok_or_else(|| DecodeError::new(label_at, "invalid label"))?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1024));
        let mut prev_key: Option<(Vec<u8>, Vec<u8>)> = None;
        for _ in 0..count {
            let at = r.offset();
            let rec = ResourceRecord::decode(&mut r)?;
            let key = (rec.payload.clone(), rec.canonical_bytes());
            if prev_key.as_ref().is_some_and(|p| *p > key) {
                return Err(DecodeError::new(at, "records not in canonical order"));
            }
            prev_key = Some(key);
            records.push(rec);
        }
        let signature = Signature(r.array()?);
        r.finish()?;
        Ok(RecordSet {
            owner,
            label,
            records,
            signature,
        })
    }

    /// Signature check only; ignores expiration.
    pub fn verify_signature(&self, owner: &PublicKey) -> bool {
        self.owner == *owner && owner.verify(&self.signing_input(), &self.signature)
    }

    /// Assembles a set from raw parts without signing anything.
    #[doc(hidden)]
    pub fn with_raw_parts(
        owner: PublicKey,
        label: Label,
        records: Vec<ResourceRecord>,
        signature: Signature,
    ) -> Self {
        RecordSet {
            owner,
            label,
            records,
            signature,
        }
    }
}

pub fn sign_record_set(
    owner: &NamespaceKey,
    label: &str,
    records: Vec<ResourceRecord>,
) -> Result<RecordSet, RecordError> {
    RecordSet::sign(owner, Label::new(label)?, records)
}

/// True iff the signature is valid for `owner_pub` and no record carries an
/// absolute expiration at or before `clock`. Undecodable payloads are an error.
pub fn verify_record_set(
    owner_pub: &PublicKey,
    set: &RecordSet,
    clock: Timestamp,
) -> Result<bool, RecordError> {
    for r in set.records() {
        r.validate_payload()
            .map_err(|e| RecordError::Malformed(e.to_string()))?;
    }
    if !set.verify_signature(owner_pub) {
        return Ok(false);
    }
    Ok(!set.records().iter().any(|r| r.is_expired(clock)))
}

pub fn canonical_serialize(set: &RecordSet) -> Vec<u8> {
    set.to_bytes()
}

pub fn canonical_deserialize(bytes: &[u8]) -> Result<RecordSet, DecodeError> {
    RecordSet::from_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delegation::{encode_attr_payload, DelegationExpression, DelegationSetEntry};
    use crate::keys::generate_namespace;

    fn attr(subject: &NamespaceKey, exp: u64) -> ResourceRecord {
        let expr = DelegationExpression::single(DelegationSetEntry::direct(subject.public_key()));
        ResourceRecord::new(
            RecordType::Attr,
            Expiration::Absolute(Timestamp(exp)),
            encode_attr_payload(&expr),
        )
    }

    #[test]
    fn label_grammar() {
        assert!(Label::new("nado").is_ok());
        assert!(Label::new("a_b-1").is_ok());
        assert!(Label::new("Nado").is_err());
        assert!(Label::new("").is_err());
        assert!(Label::new("a.b").is_err());
        assert!(Label::new("x".repeat(63)).is_ok());
        assert!(Label::new("x".repeat(64)).is_err());
    }

    #[test]
    fn sign_verify_and_tamper() {
        let k1 = generate_namespace(Some([1; 32]));
        let k2 = generate_namespace(Some([2; 32]));
        let set = sign_record_set(&k1, "nado", vec![attr(&k2, 1_000)]).unwrap();
        let pk = k1.public_key();
        assert!(verify_record_set(&pk, &set, Timestamp(10)).unwrap());
        assert!(!verify_record_set(&k2.public_key(), &set, Timestamp(10)).unwrap());

        let mut bytes = set.to_bytes();
        let last_payload_byte = bytes.len() - 65;
        bytes[last_payload_byte] ^= 1;
        let tampered = RecordSet::from_bytes(&bytes).unwrap();
        assert!(!tampered.verify_signature(&pk));
    }

    #[test]
    fn expiry_is_strict() {
        let k1 = generate_namespace(Some([1; 32]));
        let set = sign_record_set(&k1, "nado", vec![attr(&k1, 1_000)]).unwrap();
        let pk = k1.public_key();
        assert!(verify_record_set(&pk, &set, Timestamp(999)).unwrap());
        // expiration = clock - 1us
        assert!(!verify_record_set(&pk, &set, Timestamp(1_001)).unwrap());
        assert!(!verify_record_set(&pk, &set, Timestamp(1_000)).unwrap());
    }

    #[test]
    fn empty_set_is_valid() {
        let k = generate_namespace(Some([1; 32]));
        let set = sign_record_set(&k, "dco", vec![]).unwrap();
        assert!(verify_record_set(&k.public_key(), &set, Timestamp(u64::MAX)).unwrap());
        assert_eq!(set.expiration(), None);
    }

    #[test]
    fn missing_private_key_and_bad_label() {
        let k = generate_namespace(Some([1; 32]));
        assert_eq!(
            sign_record_set(&k.public_only(), "dco", vec![]).unwrap_err(),
            RecordError::MissingPrivateKey
        );
        assert!(matches!(
            sign_record_set(&k, "DCO!", vec![]),
            Err(RecordError::InvalidLabel(_))
        ));
    }

    #[test]
    fn undecodable_payload_is_malformed() {
        let k = generate_namespace(Some([1; 32]));
        let rec = ResourceRecord::new(
            RecordType::Attr,
            Expiration::Absolute(Timestamp(5)),
            vec![0, 0, 0, 0],
        );
        let set = sign_record_set(&k, "dco", vec![rec]).unwrap();
        assert!(matches!(
            verify_record_set(&k.public_key(), &set, Timestamp(1)),
            Err(RecordError::Malformed(_))
        ));
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let k = generate_namespace(Some([1; 32]));
        let a = attr(&generate_namespace(Some([2; 32])), 50);
        let b = attr(&generate_namespace(Some([3; 32])), 60);
        let s1 = sign_record_set(&k, "nado", vec![a.clone(), b.clone()]).unwrap();
        let s2 = sign_record_set(&k, "nado", vec![b, a]).unwrap();
        assert_eq!(s1.to_bytes(), s2.to_bytes());
    }

    #[test]
    fn truncation_and_order_errors() {
        let k = generate_namespace(Some([1; 32]));
        let a = attr(&generate_namespace(Some([2; 32])), 50);
        let b = attr(&generate_namespace(Some([3; 32])), 60);
        let set = sign_record_set(&k, "nado", vec![a.clone(), b.clone()]).unwrap();
        let bytes = set.to_bytes();
        for cut in [0, 5, 12, 44, bytes.len() - 1] {
            assert!(RecordSet::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(
            RecordSet::from_bytes(&extra).unwrap_err().reason,
            "trailing bytes"
        );

        // hand-build a set with records swapped
        let (first, second) = (&set.records()[0], &set.records()[1]);
        let mut swapped = Vec::new();
        swapped.extend_from_slice(RRSET_CONTEXT);
        swapped.extend_from_slice(k.public_key().as_bytes());
        put_str16(&mut swapped, "nado");
        put_u32(&mut swapped, 2);
        second.encode_into(&mut swapped);
        first.encode_into(&mut swapped);
        swapped.extend_from_slice(set.signature().as_bytes());
        let err = RecordSet::from_bytes(&swapped).unwrap_err();
        assert_eq!(err.reason, "records not in canonical order");
    }

    #[test]
    fn relative_expiration_round_trips() {
        let k = generate_namespace(Some([1; 32]));
        let mut rec = attr(&k, 0);
        rec.expiration = Expiration::Relative(Duration::from_secs(3600));
        let set = sign_record_set(&k, "contractor", vec![rec]).unwrap();
        let back = RecordSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back, set);
        assert_eq!(
            back.records()[0]
                .expiration
                .stamp(Timestamp::from_secs(100)),
            Timestamp::from_secs(3700)
        );
        // relative records never count as expired locally
        assert!(verify_record_set(&k.public_key(), &set, Timestamp(u64::MAX)).unwrap());
    }
}
