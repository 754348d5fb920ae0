//! `ATTR` payloads: delegation expressions for the four RT0 delegation types,
//! their binary codec, a small text syntax, and the issuer-side operations
//! for adding and removing delegations.
//!
//! One `ATTR` record holds one [`DelegationExpression`]. A single entry
//! encodes type 1 (`A.a <- B`), type 2 (`A.a <- B.b`) or type 3
//! (`A.a <- B.b1.b2...`); several entries are a conjunction (type 4). Several
//! records under the same label are alternatives.
//!
//! Payload layout (big-endian):
//!
//! ```text
//! entry_count u32 | per entry: subject [32] | trail_count u16 | per label: len u16 | utf-8
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{put_str16, put_u16, put_u32, DecodeError, Reader};
use crate::keys::PublicKey;
use crate::namestore::{Namespace, StoreError};
use crate::petname::PetnameTable;
use crate::record::{is_valid_label, Expiration, Label, RecordError, RecordType, ResourceRecord};

/// Guard against pathological trails; configurable per discovery run.
pub const DEFAULT_MAX_TRAIL_LEN: usize = 16;

/// The ordered attribute labels `b1...bn` following a subject. Empty means
/// the subject entity itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeTrail(Vec<Label>);

impl AttributeTrail {
    pub fn new(labels: Vec<Label>) -> Self {
        AttributeTrail(labels)
    }

    pub fn empty() -> Self {
        AttributeTrail(Vec::new())
    }

    pub fn parse(labels: &[&str]) -> Result<Self, RecordError> {
        labels
            .iter()
            .map(|l| Label::new(*l))
            .collect::<Result<Vec<_>, _>>()
            .map(AttributeTrail)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&Label> {
        self.0.first()
    }

    /// Everything after the first label.
    pub fn rest(&self) -> AttributeTrail {
        AttributeTrail(self.0.iter().skip(1).cloned().collect())
    }

    pub fn concat(&self, suffix: &AttributeTrail) -> AttributeTrail {
        let mut v = self.0.clone();
        v.extend(suffix.0.iter().cloned());
        AttributeTrail(v)
    }
}

impl fmt::Display for AttributeTrail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            f.write_str(l.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DelegationSetEntry {
    pub subject: PublicKey,
    pub trail: AttributeTrail,
}

impl DelegationSetEntry {
    pub fn new(subject: PublicKey, trail: AttributeTrail) -> Self {
        DelegationSetEntry { subject, trail }
    }

    /// Type 1: the subject entity itself.
    pub fn direct(subject: PublicKey) -> Self {
        DelegationSetEntry::new(subject, AttributeTrail::empty())
    }

    pub fn render(&self, names: &PetnameTable) -> String {
        let mut s = names.display(&self.subject);
        for l in self.trail.labels() {
            s.push('.');
            s.push_str(l.as_str());
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DelegationType {
    /// `A.a <- B`
    Direct,
    /// `A.a <- B.b`
    Attribute,
    /// `A.a <- B.b1.b2...bn`, n >= 2
    Linked,
    /// `A.a <- f1 & ... & fn`, n >= 2
    Intersection,
}

impl DelegationType {
    pub fn number(self) -> u8 {
        match self {
            DelegationType::Direct => 1,
            DelegationType::Attribute => 2,
            DelegationType::Linked => 3,
            DelegationType::Intersection => 4,
        }
    }
}

/// The right-hand side of `A.a <- e`; the payload of one `ATTR` record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<DelegationSetEntry>", into = "Vec<DelegationSetEntry>")]
pub struct DelegationExpression {
    entries: Vec<DelegationSetEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("a delegation set needs at least one entry")]
pub struct EmptyDelegationSet;

impl DelegationExpression {
    pub fn new(entries: Vec<DelegationSetEntry>) -> Result<Self, EmptyDelegationSet> {
        if entries.is_empty() {
            return Err(EmptyDelegationSet);
        }
        Ok(DelegationExpression { entries })
    }

    pub fn single(entry: DelegationSetEntry) -> Self {
        DelegationExpression {
            entries: vec![entry],
        }
    }

    pub fn entries(&self) -> &[DelegationSetEntry] {
        &self.entries
    }

    pub fn delegation_type(&self) -> DelegationType {
        match self.entries.as_slice() {
            [one] => match one.trail.len() {
                0 => DelegationType::Direct,
                1 => DelegationType::Attribute,
                _ => DelegationType::Linked,
            },
            _ => DelegationType::Intersection,
        }
    }

    pub fn render(&self, names: &PetnameTable) -> String {
        self.entries
            .iter()
            .map(|e| e.render(names))
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

impl TryFrom<Vec<DelegationSetEntry>> for DelegationExpression {
    type Error = EmptyDelegationSet;
    fn try_from(v: Vec<DelegationSetEntry>) -> Result<Self, Self::Error> {
        DelegationExpression::new(v)
    }
}

impl From<DelegationExpression> for Vec<DelegationSetEntry> {
    fn from(e: DelegationExpression) -> Self {
        e.entries
    }
}

pub fn encode_attr_payload(expr: &DelegationExpression) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, expr.entries.len() as u32);
    for e in &expr.entries {
        out.extend_from_slice(e.subject.as_bytes());
        put_u16(&mut out, e.trail.len() as u16);
        for l in e.trail.labels() {
            put_str16(&mut out, l.as_str());
        }
    }
    out
}

pub fn decode_attr_payload(bytes: &[u8]) -> Result<DelegationExpression, DecodeError> {
    let mut r = Reader::new(bytes);
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(DecodeError::new(0, "empty delegation set"));
    }
    let mut entries = Vec::with_capacity(count.min(256));
    for _ in 0..count {
        let subject = PublicKey::from_bytes(r.array()?);
        let n = r.u16()? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let len = r.u16()? as usize;
            let raw = r.bytes(len)?;
            let label = std::str::from_utf8(raw)
                .ok()
                .filter(|s| is_valid_label(s))
                .ok_or_else(|| DecodeError::new(at, "invalid label in trail"))?;
            labels.push(Label::new(label).expect("validated above"));
        }
        entries.push(DelegationSetEntry::new(subject, AttributeTrail(labels)));
    }
    r.finish()?;
    Ok(DelegationExpression { entries })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("parse error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown petname {0:?}")]
    UnknownPetname(String),
}

/// Parses `subject(.label)* (& subject(.label)*)*`. A subject is a 64-digit
/// hex key or a petname from `names`.
pub fn parse_expression(
    text: &str,
    names: &PetnameTable,
) -> Result<DelegationExpression, ParseError> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for term in text.split('&') {
        let lead = term.len() - term.trim_start().len();
        let start = offset + lead;
        let trimmed = term.trim();
        if trimmed.is_empty() {
            return Err(ParseError::Syntax {
                position: start,
                message: "empty term".into(),
            });
        }
        let mut parts = trimmed.split('.');
        let subject_text = parts.next().unwrap_or_default();
        let subject =
            if subject_text.len() == 64 && subject_text.bytes().all(|b| b.is_ascii_hexdigit()) {
                PublicKey::from_hex(subject_text).map_err(|e| ParseError::Syntax {
                    position: start,
                    message: e.to_string(),
                })?
            } else if crate::petname::is_valid_petname(subject_text) {
                names
                    .get(subject_text)
                    .ok_or_else(|| ParseError::UnknownPetname(subject_text.to_owned()))?
            } else {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("invalid subject {subject_text:?}"),
                });
            };
        let mut pos = start + subject_text.len() + 1;
        let mut labels = Vec::new();
        for part in parts {
            let label = Label::new(part).map_err(|_| ParseError::Syntax {
                position: pos,
                message: format!("invalid attribute label {part:?}"),
            })?;
            labels.push(label);
            pos += part.len() + 1;
        }
        entries.push(DelegationSetEntry::new(subject, AttributeTrail(labels)));
        offset += term.len() + 1;
    }
    Ok(DelegationExpression { entries })
}

pub fn render_expression(expr: &DelegationExpression, names: &PetnameTable) -> String {
    expr.render(names)
}

#[derive(Debug, Error)]
pub enum DelegationError {
    #[error("namespace has no private key")]
    MissingPrivateKey,
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("identical delegation already present under {0}")]
    DuplicateDelegation(Label),
    #[error("no matching delegation under {0}")]
    NotFound(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for DelegationError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::MissingPrivateKey => DelegationError::MissingPrivateKey,
            StoreError::InvalidLabel(l) => DelegationError::InvalidLabel(l),
            other => DelegationError::Store(other),
        }
    }
}

/// Appends an `ATTR` record for `issuer.attribute <- expr`. Existing records
/// under the label are kept (they are alternatives). The delegation becomes
/// resolvable by others only after the namespace is published.
pub fn add_delegation(
    issuer: &mut Namespace,
    attribute: &str,
    expr: &DelegationExpression,
    expiration: Expiration,
) -> Result<ResourceRecord, DelegationError> {
    if !issuer.key().has_private() {
        return Err(DelegationError::MissingPrivateKey);
    }
    let label =
        Label::new(attribute).map_err(|_| DelegationError::InvalidLabel(attribute.to_owned()))?;
    let payload = encode_attr_payload(expr);
    let mut records = issuer
        .get(&label)
        .map(|s| s.records().to_vec())
        .unwrap_or_default();
    if records
        .iter()
        .any(|r| r.record_type == RecordType::Attr && r.payload == payload)
    {
        return Err(DelegationError::DuplicateDelegation(label));
    }
    let record = ResourceRecord::new(RecordType::Attr, expiration, payload);
    records.push(record.clone());
    issuer.store(label.as_str(), records)?;
    Ok(record)
}

/// Removes the `ATTR` record for `issuer.attribute <- expr`, leaving other
/// records under the label untouched.
pub fn remove_delegation(
    issuer: &mut Namespace,
    attribute: &str,
    expr: &DelegationExpression,
) -> Result<(), DelegationError> {
    if !issuer.key().has_private() {
        return Err(DelegationError::MissingPrivateKey);
    }
    let label =
        Label::new(attribute).map_err(|_| DelegationError::InvalidLabel(attribute.to_owned()))?;
    let payload = encode_attr_payload(expr);
    let records = issuer
        .get(&label)
        .map(|s| s.records().to_vec())
        .ok_or_else(|| DelegationError::NotFound(attribute.to_owned()))?;
    let before = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| !(r.record_type == RecordType::Attr && r.payload == payload))
        .collect();
    if kept.len() == before {
        return Err(DelegationError::NotFound(attribute.to_owned()));
    }
    issuer.store(label.as_str(), kept)?;
    Ok(())
}

/// Every `ATTR` delegation in the namespace as `(attribute, expression, expiration)`.
pub fn list_delegations(ns: &Namespace) -> Vec<(Label, DelegationExpression, Expiration)> {
    let mut out = Vec::new();
    for (label, set) in ns.list() {
        for r in set.records() {
            if r.record_type != RecordType::Attr {
                continue;
            }
            if let Ok(expr) = decode_attr_payload(&r.payload) {
                out.push((label.clone(), expr, r.expiration));
            }
        }
    }
    out
}
