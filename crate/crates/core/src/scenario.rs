//! The anti-doping fixture: a sports authority `S` delegating its `user`
//! attribute through WADA, two national agencies and their contractors down
//! to doping control officers.
//!
//! ```text
//! (1)  S.user           <- WADA.nado.dco
//! (2)  WADA.nado        <- NADA
//! (3)  WADA.nado        <- USADA
//! (4)  NADA.dco         <- C1.dco
//! (5)  USADA.dco        <- USADA.contractor.dco
//! (6)  USADA.contractor <- C2                      (relative, 1 hour)
//! (7)  C2.dco           <- C2.employee & C2.controller
//! (8)  C1.dco           <- Alice                   credential
//! (9)  C2.employee      <- Bob                     credential
//! (10) C2.controller    <- Bob                     credential
//! ```
//!
//! Keys are derived from fixed seeds so every run produces the same
//! namespaces.

use std::collections::BTreeMap;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::credential::{issue_credential, store_credential, Credential};
use crate::delegation::{add_delegation, parse_expression, DelegationExpression};
use crate::discovery::OracleDelegation;
use crate::keys::{generate_namespace, PublicKey};
use crate::namestore::{Namespace, PublishReport};
use crate::netsim::NameSystemBackend;
use crate::petname::PetnameTable;
use crate::record::{Expiration, Label};
use crate::time::Timestamp;

pub const ENTITIES: [&str; 8] = ["S", "WADA", "NADA", "USADA", "C1", "C2", "Bob", "Alice"];

/// `(issuer, attribute, expression)` for statements (1)-(7).
pub const DELEGATIONS: [(&str, &str, &str); 7] = [
    ("S", "user", "WADA.nado.dco"),
    ("WADA", "nado", "NADA"),
    ("WADA", "nado", "USADA"),
    ("NADA", "dco", "C1.dco"),
    ("USADA", "dco", "USADA.contractor.dco"),
    ("USADA", "contractor", "C2"),
    ("C2", "dco", "C2.employee & C2.controller"),
];

/// `(issuer, attribute, holder)` for statements (8)-(10).
pub const CREDENTIALS: [(&str, &str, &str); 3] = [
    ("C1", "dco", "Alice"),
    ("C2", "employee", "Bob"),
    ("C2", "controller", "Bob"),
];

pub const POLICY_RESOURCE: &str = "dco-portal";
pub const POLICY_ATTRIBUTES: [&str; 1] = ["user"];

pub const DEFAULT_LIFETIME: Duration = Duration::from_secs(30 * 24 * 3600);
/// Lifetime of the contractor delegation (6), stamped at publish time.
pub const CONTRACTOR_LIFETIME: Duration = Duration::from_secs(3600);

pub fn seed(name: &str) -> [u8; 32] {
    Sha256::digest(format!("abd-scenario-v1/{name}")).into()
}

pub fn public_key(name: &str) -> PublicKey {
    generate_namespace(Some(seed(name))).public_key()
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub namespaces: BTreeMap<String, Namespace>,
    pub names: PetnameTable,
    /// Issued credentials by holder petname.
    pub credentials: BTreeMap<String, Vec<Credential>>,
}

impl Scenario {
    /// Builds every namespace with statements (1)-(7) stored and (8)-(10)
    /// issued at `clock`. Nothing is published yet.
    pub fn build(clock: Timestamp) -> Self {
        let mut names = PetnameTable::new();
        let mut namespaces = BTreeMap::new();
        for name in ENTITIES {
            let ns = Namespace::new(generate_namespace(Some(seed(name))), Some(name.to_owned()));
            names.insert(name, ns.public_key());
            namespaces.insert(name.to_owned(), ns);
        }
        for (issuer, attr, text) in DELEGATIONS {
            let expr = parse_expression(text, &names).expect("fixture expression parses");
            let expiration = if attr == "contractor" {
                Expiration::Relative(CONTRACTOR_LIFETIME)
            } else {
                Expiration::Absolute(clock.saturating_add(DEFAULT_LIFETIME))
            };
            let ns = namespaces.get_mut(issuer).expect("fixture issuer");
            add_delegation(ns, attr, &expr, expiration).expect("fixture delegation");
        }
        let mut credentials: BTreeMap<String, Vec<Credential>> = BTreeMap::new();
        for (issuer, attr, holder) in CREDENTIALS {
            let key = namespaces[issuer].key().clone();
            let cred = issue_credential(
                &key,
                names.get(holder).expect("holder"),
                attr,
                DEFAULT_LIFETIME,
                clock,
            )
            .expect("fixture credential");
            store_credential(namespaces.get_mut(holder).expect("holder"), &cred)
                .expect("store credential");
            credentials.entry(holder.to_owned()).or_default().push(cred);
        }
        Scenario {
            namespaces,
            names,
            credentials,
        }
    }

    pub fn key(&self, name: &str) -> PublicKey {
        self.names
            .get(name)
            .unwrap_or_else(|| panic!("no fixture entity {name}"))
    }

    pub fn namespace(&self, name: &str) -> &Namespace {
        &self.namespaces[name]
    }

    pub fn namespace_mut(&mut self, name: &str) -> &mut Namespace {
        self.namespaces.get_mut(name).expect("fixture entity")
    }

    pub fn creds(&self, holder: &str) -> Vec<Credential> {
        self.credentials.get(holder).cloned().unwrap_or_default()
    }

    /// The credential `issuer.attribute` held by `holder`.
    pub fn cred(&self, holder: &str, issuer: &str, attribute: &str) -> Credential {
        let issuer = self.key(issuer);
        self.creds(holder)
            .into_iter()
            .find(|c| c.issuer == issuer && c.attribute.as_str() == attribute)
            .expect("fixture credential")
    }

    pub fn all_credentials(&self) -> Vec<Credential> {
        self.credentials.values().flatten().cloned().collect()
    }

    /// Publishes every namespace, returning the reports of any that were
    /// not published completely.
    pub fn publish_all(
        &mut self,
        backend: &mut dyn NameSystemBackend,
        clock: Timestamp,
    ) -> Vec<PublishReport> {
        self.namespaces
            .values_mut()
            .map(|ns| ns.publish(backend, clock))
            .filter(|r| !r.is_complete())
            .collect()
    }

    pub fn expression(&self, text: &str) -> DelegationExpression {
        parse_expression(text, &self.names).expect("fixture expression")
    }

    /// Statements (1)-(7) for the oracle.
    pub fn delegations(&self) -> Vec<OracleDelegation> {
        DELEGATIONS
            .iter()
            .map(|(issuer, attr, text)| OracleDelegation {
                issuer: self.key(issuer),
                attribute: Label::new(*attr).expect("fixture label"),
                expression: self.expression(text),
            })
            .collect()
    }

    pub fn policy_attributes() -> Vec<Label> {
        POLICY_ATTRIBUTES
            .iter()
            .map(|a| Label::new(*a).expect("label"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delegation::list_delegations;
    use crate::netsim::MemoryBackend;

    #[test]
    fn fixture_is_deterministic() {
        let a = Scenario::build(Timestamp::from_secs(1_700_000_000));
        let b = Scenario::build(Timestamp::from_secs(1_700_000_000));
        for name in ENTITIES {
            assert_eq!(a.key(name), b.key(name));
            assert_eq!(a.key(name), public_key(name));
        }
        assert_eq!(a.all_credentials(), b.all_credentials());
    }

    #[test]
    fn fixture_counts() {
        let s = Scenario::build(Timestamp::from_secs(1_700_000_000));
        let total: usize = s
            .namespaces
            .values()
            .map(|ns| list_delegations(ns).len())
            .sum();
        assert_eq!(total, 7);
        assert_eq!(s.all_credentials().len(), 3);
        assert_eq!(s.creds("Bob").len(), 2);
    }

    #[test]
    fn publishes_everything() {
        let t = Timestamp::from_secs(1_700_000_000);
        let mut s = Scenario::build(t);
        let mut backend = MemoryBackend::new();
        assert!(s.publish_all(&mut backend, t).is_empty());
        // one set per issuer label; credentials stay local
        assert_eq!(backend.len(), 6);
    }
}
