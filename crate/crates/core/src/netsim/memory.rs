use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{servable, validate_put, BackendError, LookupStats, NameSystemBackend, QueryKey};
use crate::record::RecordSet;
use crate::time::Timestamp;

/// A plain map from query key to record set. Deterministic and instant.
#[derive(Debug, Clone, Default)]
pub struct MemoryBackend {
    sets: BTreeMap<QueryKey, RecordSet>,
    stats: LookupStats,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QueryKey, &RecordSet)> {
        self.sets.iter()
    }
}

impl NameSystemBackend for MemoryBackend {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        validate_put(&key, &set)?;
        self.stats.puts += 1;
        self.sets.insert(key, set);
        Ok(())
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        self.stats.lookups += 1;
        self.stats.messages += 1;
        Ok(self.sets.get(key).filter(|s| servable(s, clock)).cloned())
    }

    fn stats(&self) -> LookupStats {
        self.stats
    }
}

/// The in-memory map persisted as one file per query key, so that several
/// processes sharing a data directory see the same published records.
#[derive(Debug, Clone)]
pub struct DirectoryBackend {
    root: PathBuf,
    stats: LookupStats,
}

impl DirectoryBackend {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DirectoryBackend {
            root,
            stats: LookupStats::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Every stored set, including ones that would no longer be served.
    pub fn entries(&self) -> io::Result<Vec<(QueryKey, RecordSet)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let Some(key) = QueryKey::from_hex(&entry.file_name().to_string_lossy()) else {
                continue;
            };
            if let Ok(set) = RecordSet::from_bytes(&fs::read(entry.path())?) {
                out.push((key, set));
            }
        }
        out.sort_by_key(|(k, _)| *k);
        Ok(out)
    }
}

impl NameSystemBackend for DirectoryBackend {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        validate_put(&key, &set)?;
        fs::write(self.root.join(key.to_hex()), set.to_bytes())
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        self.stats.puts += 1;
        Ok(())
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        self.stats.lookups += 1;
        self.stats.messages += 1;
        let bytes = match fs::read(self.root.join(key.to_hex())) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Unavailable(e.to_string())),
        };
        let Ok(set) = RecordSet::from_bytes(&bytes) else {
            self.stats.rejected += 1;
            return Err(BackendError::BadSignature);
        };
        if !set.verify_signature(&set.owner()) {
            self.stats.rejected += 1;
            return Err(BackendError::BadSignature);
        }
        Ok(Some(set).filter(|s| servable(s, clock)))
    }

    fn stats(&self) -> LookupStats {
        self.stats
    }
}

/// Wraps a backend and keeps a copy of every accepted put.
#[derive(Debug, Clone, Default)]
pub struct RecordingBackend<B> {
    inner: B,
    puts: Vec<(QueryKey, RecordSet)>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            puts: Vec::new(),
        }
    }

    pub fn puts(&self) -> &[(QueryKey, RecordSet)] {
        &self.puts
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut B {
        &mut self.inner
    }
}

impl<B: NameSystemBackend> NameSystemBackend for RecordingBackend<B> {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        self.inner.put(key, set.clone())?;
        self.puts.push((key, set));
        Ok(())
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        self.inner.get(key, clock)
    }

    fn stats(&self) -> LookupStats {
        self.inner.stats()
    }
}
