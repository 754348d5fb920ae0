//! Locally owned namespaces: the issuer-side store for delegations and the
//! subject-side store for credentials.
//!
//! On disk each namespace is a directory named by its hex public key holding
//! one file per label with the canonical record-set bytes. Metadata files
//! start with a dot, which the label grammar never produces:
//!
//! ```text
//! <root>/<hex pk>/<label>       canonical RecordSet bytes
//! <root>/<hex pk>/.secret       hex seed (owned namespaces only)
//! <root>/<hex pk>/.withdrawn    labels removed since the last publish
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::keys::{NamespaceKey, PublicKey};
use crate::netsim::{derive_query_key, BackendError, NameSystemBackend};
use crate::record::{Expiration, Label, RecordError, RecordSet, RecordType, ResourceRecord};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("namespace has no private key")]
    MissingPrivateKey,
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("label {0} not found")]
    NotFound(String),
    #[error("corrupt store entry {label}: {reason}")]
    CorruptStore { label: String, reason: String },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

impl From<RecordError> for StoreError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::MissingPrivateKey => StoreError::MissingPrivateKey,
            RecordError::InvalidLabel(l) => StoreError::InvalidLabel(l),
            other => StoreError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Namespace {
    key: NamespaceKey,
    entries: BTreeMap<Label, RecordSet>,
    withdrawn: BTreeSet<Label>,
    quarantined: BTreeMap<String, String>,
    petname: Option<String>,
}

impl Namespace {
    pub fn new(key: NamespaceKey, petname: Option<String>) -> Self {
        Namespace {
            key,
            entries: BTreeMap::new(),
            withdrawn: BTreeSet::new(),
            quarantined: BTreeMap::new(),
            petname,
        }
    }

    pub fn key(&self) -> &NamespaceKey {
        &self.key
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn petname(&self) -> Option<&str> {
        self.petname.as_deref()
    }

    pub fn set_petname(&mut self, name: Option<String>) {
        self.petname = name;
    }

    /// Replaces everything under `label` with a freshly signed set. An empty
    /// list leaves the label present with no records.
    pub fn store(
        &mut self,
        label: &str,
        records: Vec<ResourceRecord>,
    ) -> Result<&RecordSet, StoreError> {
        let label = Label::new(label)?;
        if !self.key.has_private() {
            return Err(StoreError::MissingPrivateKey);
        }
        for r in &records {
            r.validate_payload()
                .map_err(|e| StoreError::Malformed(e.to_string()))?;
        }
        let set = RecordSet::sign(&self.key, label.clone(), records)?;
        self.withdrawn.remove(&label);
        self.quarantined.remove(label.as_str());
        Ok(self.entries.entry(label).insert_entry(set).into_mut())
    }

    /// Deletes the label. Published copies are withdrawn on the next publish;
    /// caches elsewhere keep them until their TTL runs out.
    pub fn remove(&mut self, label: &str) -> Result<RecordSet, StoreError> {
        if !self.key.has_private() {
            return Err(StoreError::MissingPrivateKey);
        }
        let label = Label::new(label)?;
        let set = self
            .entries
            .remove(&label)
            .ok_or_else(|| StoreError::NotFound(label.to_string()))?;
        if set
            .records()
            .iter()
            .any(|r| r.record_type == RecordType::Attr)
        {
            self.withdrawn.insert(label);
        }
        Ok(set)
    }

    pub fn get(&self, label: &Label) -> Option<&RecordSet> {
        self.entries.get(label)
    }

    /// Local lookup by label text.
    pub fn lookup(&self, label: &str) -> Result<&RecordSet, StoreError> {
        let label = Label::new(label)?;
        self.entries
            .get(&label)
            .ok_or_else(|| StoreError::NotFound(label.to_string()))
    }

    pub fn list(&self) -> impl Iterator<Item = (&Label, &RecordSet)> {
        self.entries.iter()
    }

    pub fn withdrawn(&self) -> impl Iterator<Item = &Label> {
        self.withdrawn.iter()
    }

    /// Entries that failed verification when loaded from disk, with the reason.
    pub fn quarantined(&self) -> &BTreeMap<String, String> {
        &self.quarantined
    }

    /// Publishes every label's `ATTR` records to `backend`.
    ///
    /// `CRED` records are never published. Relative expirations are stamped
    /// absolute at `clock`; records already expired are left out. Labels removed
    /// since the last publish are overwritten with a signed empty set.
    pub fn publish(
        &mut self,
        backend: &mut dyn NameSystemBackend,
        clock: Timestamp,
    ) -> PublishReport {
        let mut report = PublishReport::default();
        let pk = self.public_key();
        for (label, set) in &self.entries {
            let attrs: Vec<_> = set
                .records()
                .iter()
                .filter(|r| r.record_type == RecordType::Attr)
                .map(|r| ResourceRecord {
                    expiration: Expiration::Absolute(r.expiration.stamp(clock)),
                    ..r.clone()
                })
                .collect();
            if attrs.is_empty()
                && set
                    .records()
                    .iter()
                    .any(|r| r.record_type == RecordType::Cred)
            {
                // purely subject-side label
                continue;
            }
            let (live, expired): (Vec<_>, Vec<_>) =
                attrs.into_iter().partition(|r| !r.is_expired(clock));
            let outcome = RecordSet::sign(&self.key, label.clone(), live)
                .map_err(|e| BackendError::Rejected(e.to_string()))
                .and_then(|signed| {
                    let exp = signed.expiration();
                    backend
                        .put(derive_query_key(&pk, label), signed)
                        .map(|_| exp)
                });
            report.labels.push(PublishedLabel {
                label: label.clone(),
                expiration: outcome.as_ref().ok().copied().flatten(),
                skipped_expired: expired.len(),
                error: outcome.err().map(|e| e.to_string()),
            });
        }
        let withdrawn: Vec<_> = self.withdrawn.iter().cloned().collect();
        for label in withdrawn {
            let outcome = RecordSet::sign(&self.key, label.clone(), Vec::new())
                .map_err(|e| BackendError::Rejected(e.to_string()))
                .and_then(|empty| backend.put(derive_query_key(&pk, &label), empty));
            let ok = outcome.is_ok();
            report.labels.push(PublishedLabel {
                label: label.clone(),
                expiration: None,
                skipped_expired: 0,
                error: outcome.err().map(|e| e.to_string()),
            });
            if ok {
                self.withdrawn.remove(&label);
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublishedLabel {
    pub label: Label,
    /// Earliest absolute expiration in the published set; `None` for an empty set.
    pub expiration: Option<Timestamp>,
    pub skipped_expired: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PublishReport {
    pub labels: Vec<PublishedLabel>,
}

impl PublishReport {
    pub fn is_complete(&self) -> bool {
        self.labels.iter().all(|l| l.error.is_none())
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A directory holding many namespaces.
#[derive(Debug, Clone)]
pub struct NameStore {
    root: PathBuf,
}

impl NameStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(NameStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, pk: &PublicKey) -> PathBuf {
        self.root.join(pk.to_hex())
    }

    pub fn contains(&self, pk: &PublicKey) -> bool {
        self.dir(pk).is_dir()
    }

    /// Writes every entry, removes files for labels no longer present and
    /// records pending withdrawals. The private key is written when held.
    pub fn save(&self, ns: &Namespace) -> Result<(), StoreError> {
        let dir = self.dir(&ns.public_key());
        fs::create_dir_all(&dir)?;
        if let Some(secret) = ns.key.secret_bytes() {
            fs::write(dir.join(".secret"), hex::encode(secret))?;
        }
        for (label, set) in &ns.entries {
            fs::write(dir.join(label.as_str()), set.to_bytes())?;
        }
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || ns.quarantined.contains_key(&name) {
                continue;
            }
            let keep = Label::new(name.as_str())
                .map(|l| ns.entries.contains_key(&l))
                .unwrap_or(true);
            if !keep {
                fs::remove_file(entry.path())?;
            }
        }
        let withdrawn: Vec<&str> = ns.withdrawn.iter().map(Label::as_str).collect();
        fs::write(dir.join(".withdrawn"), withdrawn.join("\n"))?;
        Ok(())
    }

    /// Loads a namespace. Entries whose bytes do not decode or whose signature
    /// fails are quarantined (see [`Namespace::quarantined`]), never dropped
    /// silently; the rest load normally.
    pub fn load(&self, pk: &PublicKey) -> Result<Namespace, StoreError> {
        let dir = self.dir(pk);
        if !dir.is_dir() {
            return Err(StoreError::NotFound(pk.to_hex()));
        }
        let key = match fs::read_to_string(dir.join(".secret")) {
            Ok(s) => {
                let seed: [u8; 32] = hex::decode(s.trim())
                    .ok()
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| StoreError::CorruptStore {
                        label: ".secret".into(),
                        reason: "bad seed".into(),
                    })?;
                let key = NamespaceKey::generate(Some(seed));
                if key.public_key() != *pk {
                    return Err(StoreError::CorruptStore {
                        label: ".secret".into(),
                        reason: "seed does not match namespace key".into(),
                    });
                }
                key
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => NamespaceKey::from_public(*pk),
            Err(e) => return Err(e.into()),
        };
        let mut ns = Namespace::new(key, None);
        let mut names: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| !n.starts_with('.'))
            .collect();
        names.sort();
        for name in names {
            let bytes = fs::read(dir.join(&name))?;
            match check_entry(pk, &name, &bytes) {
                Ok(set) => {
                    ns.entries.insert(set.label().clone(), set);
                }
                Err(reason) => {
                    ns.quarantined.insert(name, reason);
                }
            }
        }
        if let Ok(s) = fs::read_to_string(dir.join(".withdrawn")) {
            ns.withdrawn = s.lines().filter_map(|l| Label::new(l).ok()).collect();
        }
        Ok(ns)
    }

    /// Loads a namespace and fails with `CorruptStore` on the first
    /// quarantined entry.
    pub fn load_strict(&self, pk: &PublicKey) -> Result<Namespace, StoreError> {
        let ns = self.load(pk)?;
        if let Some((label, reason)) = ns.quarantined.iter().next() {
            return Err(StoreError::CorruptStore {
                label: label.clone(),
                reason: reason.clone(),
            });
        }
        Ok(ns)
    }

    pub fn namespaces(&self) -> Result<Vec<PublicKey>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().is_dir() {
                if let Ok(pk) = PublicKey::from_hex(&entry.file_name().to_string_lossy()) {
                    out.push(pk);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

fn check_entry(pk: &PublicKey, name: &str, bytes: &[u8]) -> Result<RecordSet, String> {
    let set = RecordSet::from_bytes(bytes).map_err(|e| e.to_string())?;
    if set.label().as_str() != name {
        return Err(format!("file name does not match label {}", set.label()));
    }
    if !set.verify_signature(pk) {
        return Err("signature check failed".into());
    }
    Ok(set)
}
