//! The data directory: namespaces, petnames, the published-record store,
//! the policy file and exported credentials.

use std::fs;
use std::path::{Path, PathBuf};

use abd_core::netsim::DirectoryBackend;
use abd_core::{NameStore, Namespace, PetnameTable, PublicKey};
use anyhow::{anyhow, bail, Context, Result};

pub struct Home {
    pub root: PathBuf,
    pub store: NameStore,
    pub names: PetnameTable,
}

impl Home {
    pub fn default_root() -> PathBuf {
        std::env::var_os("HOME")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(".abd")
    }

    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let store = NameStore::open(root.join("namespaces"))?;
        let names_path = root.join("petnames.json");
        let names = if names_path.exists() {
            let text = fs::read_to_string(&names_path)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", names_path.display()))?
        } else {
            PetnameTable::new()
        };
        Ok(Home {
            root: root.to_owned(),
            store,
            names,
        })
    }

    pub fn save_names(&self) -> Result<()> {
        fs::write(
            self.root.join("petnames.json"),
            serde_json::to_string_pretty(&self.names)?,
        )?;
        Ok(())
    }

    pub fn policy_path(&self) -> PathBuf {
        self.root.join("policy.json")
    }

    pub fn creds_dir(&self) -> PathBuf {
        self.root.join("creds")
    }

    pub fn key(&self, name_or_hex: &str) -> Result<PublicKey> {
        self.names
            .lookup(name_or_hex)
            .ok_or_else(|| anyhow!("unknown identity {name_or_hex:?} (not a petname or hex key)"))
    }

    pub fn namespace(&self, name_or_hex: &str) -> Result<Namespace> {
        let pk = self.key(name_or_hex)?;
        if !self.store.contains(&pk) {
            bail!("no local namespace for {name_or_hex}");
        }
        let mut ns = self.store.load(&pk)?;
        if ns.petname().is_none() {
            ns.set_petname(self.names.name_of(&pk).map(str::to_owned));
        }
        for (label, reason) in ns.quarantined() {
            eprintln!("warning: {name_or_hex}/{label} quarantined: {reason}");
        }
        Ok(ns)
    }

    /// A namespace this home holds the private key of.
    pub fn owned(&self, name_or_hex: &str) -> Result<Namespace> {
        let ns = self.namespace(name_or_hex)?;
        if !ns.key().has_private() {
            bail!("{name_or_hex}: namespace has no private key");
        }
        Ok(ns)
    }

    /// Every local namespace holding a private key.
    pub fn owned_all(&self) -> Result<Vec<Namespace>> {
        let mut out = Vec::new();
        for pk in self.store.namespaces()? {
            let ns = self.store.load(&pk)?;
            if ns.key().has_private() {
                out.push(ns);
            }
        }
        Ok(out)
    }

    pub fn backend(&self) -> Result<DirectoryBackend> {
        Ok(DirectoryBackend::open(self.root.join("published"))?)
    }

    pub fn display(&self, pk: &PublicKey) -> String {
        self.names.display(pk)
    }
}
