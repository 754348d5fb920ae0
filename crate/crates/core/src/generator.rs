//! Random delegation graphs: namespaces, `ATTR` delegations of all four
//! types and a handful of credentials for one subject. Used by property
//! tests and the acceptance suite; deterministic per seed.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::credential::{issue_credential, Credential};
use crate::delegation::{add_delegation, AttributeTrail, DelegationExpression, DelegationSetEntry};
use crate::discovery::OracleDelegation;
use crate::keys::{generate_namespace, NamespaceKey, PublicKey};
use crate::namestore::Namespace;
use crate::netsim::NameSystemBackend;
use crate::record::{Expiration, Label};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub max_namespaces: usize,
    pub max_attributes: usize,
    pub max_records_per_label: usize,
    pub max_entries_per_record: usize,
    pub max_trail_len: usize,
    pub max_credentials: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_namespaces: 10,
            max_attributes: 4,
            max_records_per_label: 3,
            max_entries_per_record: 3,
            max_trail_len: 3,
            max_credentials: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub keys: Vec<NamespaceKey>,
    pub subject: PublicKey,
    pub subject_key: NamespaceKey,
    pub attributes: Vec<Label>,
    pub delegations: Vec<OracleDelegation>,
    pub credentials: Vec<Credential>,
}

fn key_for(seed: u64, i: usize) -> NamespaceKey {
    let mut h = Sha256::new();
    h.update(b"abd-generator");
    h.update(seed.to_be_bytes());
    h.update((i as u64).to_be_bytes());
    generate_namespace(Some(h.finalize().into()))
}

impl Instance {
    /// Credentials are issued at `clock` and valid for a day.
    pub fn generate(seed: u64, bounds: &Bounds, clock: Timestamp) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=bounds.max_namespaces.max(1));
        let keys: Vec<NamespaceKey> = (0..n).map(|i| key_for(seed, i)).collect();
        let subject_key = key_for(seed, usize::MAX);
        let subject = subject_key.public_key();
        let attributes: Vec<Label> = (0..bounds.max_attributes.max(1))
            .map(|i| Label::new(format!("a{i}")).expect("label"))
            .collect();
        let mut entities: Vec<PublicKey> = keys.iter().map(|k| k.public_key()).collect();
        entities.push(subject);

        let mut delegations: Vec<OracleDelegation> = Vec::new();
        for k in &keys {
            for attr in &attributes {
                if !rng.random_bool(0.5) {
                    continue;
                }
                let count = rng.random_range(1..=bounds.max_records_per_label.max(1));
                for _ in 0..count {
                    let width = match rng.random_range(0..10) {
                        0..=5 => 1,
                        6..=8 => 2,
                        _ => 3,
                    }
                    .min(bounds.max_entries_per_record.max(1));
                    let entries = (0..width)
                        .map(|_| {
                            let who = entities[rng.random_range(0..entities.len())];
                            let len = match rng.random_range(0..20) {
                                0..=4 => 0,
                                5..=12 => 1,
                                13..=17 => 2,
                                _ => 3,
                            }
                            .min(bounds.max_trail_len);
                            let trail = (0..len)
                                .map(|_| attributes[rng.random_range(0..attributes.len())].clone())
                                .collect();
                            DelegationSetEntry::new(who, AttributeTrail::new(trail))
                        })
                        .collect();
                    let d = OracleDelegation {
                        issuer: k.public_key(),
                        attribute: attr.clone(),
                        expression: DelegationExpression::new(entries).expect("non-empty"),
                    };
                    if !delegations.contains(&d) {
                        delegations.push(d);
                    }
                }
            }
        }

        let cred_count = rng.random_range(0..=bounds.max_credentials);
        let mut credentials: Vec<Credential> = Vec::new();
        for _ in 0..cred_count {
            let issuer = &keys[rng.random_range(0..keys.len())];
            let attr = &attributes[rng.random_range(0..attributes.len())];
            if credentials
                .iter()
                .any(|c| c.issuer == issuer.public_key() && c.attribute == *attr)
            {
                continue;
            }
            let c = issue_credential(
                issuer,
                subject,
                attr.as_str(),
                Duration::from_secs(86_400),
                clock,
            )
            .expect("credential");
            credentials.push(c);
        }

        Instance {
            keys,
            subject,
            subject_key,
            attributes,
            delegations,
            credentials,
        }
    }

    /// A random root role `(namespace, attribute)` drawn from `rng_seed`.
    pub fn pick_root(&self, rng_seed: u64) -> (PublicKey, Label) {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let k = &self.keys[rng.random_range(0..self.keys.len())];
        let a = &self.attributes[rng.random_range(0..self.attributes.len())];
        (k.public_key(), a.clone())
    }

    /// Namespaces holding the delegations, unpublished.
    pub fn namespaces(&self, expiration: Timestamp) -> Vec<Namespace> {
        self.keys
            .iter()
            .map(|k| {
                let mut ns = Namespace::new(k.clone(), None);
                for d in self
                    .delegations
                    .iter()
                    .filter(|d| d.issuer == k.public_key())
                {
                    add_delegation(
                        &mut ns,
                        d.attribute.as_str(),
                        &d.expression,
                        Expiration::Absolute(expiration),
                    )
                    .expect("generated delegation");
                }
                ns
            })
            .collect()
    }

    /// Publishes every delegation with the given absolute expiration.
    pub fn publish(
        &self,
        backend: &mut dyn NameSystemBackend,
        clock: Timestamp,
        expiration: Timestamp,
    ) {
        for mut ns in self.namespaces(expiration) {
            let report = ns.publish(backend, clock);
            assert!(report.is_complete(), "publish failed: {report:?}");
        }
    }
}
