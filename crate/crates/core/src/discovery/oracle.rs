//! Reference semantics for tests: bottom-up least fixpoint over every
//! delegation and credential at once, with no name-system resolution.

use std::collections::{BTreeSet, HashMap};

use crate::credential::Credential;
use crate::delegation::{AttributeTrail, DelegationExpression};
use crate::keys::PublicKey;
use crate::record::Label;

/// `issuer.attribute <- expression`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleDelegation {
    pub issuer: PublicKey,
    pub attribute: Label,
    pub expression: DelegationExpression,
}

type Roles = HashMap<(PublicKey, Label), BTreeSet<PublicKey>>;

fn members_of(roles: &Roles, subject: &PublicKey, trail: &AttributeTrail) -> BTreeSet<PublicKey> {
    let mut current: BTreeSet<PublicKey> = [*subject].into();
    for label in trail.labels() {
        let mut next = BTreeSet::new();
        for k in &current {
            if let Some(m) = roles.get(&(*k, label.clone())) {
                next.extend(m.iter().copied());
            }
        }
        current = next;
    }
    current
}

/// Whether `subject_pub` is in the least model of `issuer_pub.attribute`.
/// Credentials are taken as given; callers filter out invalid ones.
pub fn oracle_entailed(
    all_delegations: &[OracleDelegation],
    all_credentials: &[Credential],
    issuer_pub: &PublicKey,
    attribute: &Label,
    subject_pub: &PublicKey,
) -> bool {
    let mut roles: Roles = HashMap::new();
    for c in all_credentials {
        roles
            .entry((c.issuer, c.attribute.clone()))
            .or_default()
            .insert(c.subject);
    }
    loop {
        let mut changed = false;
        for d in all_delegations {
            let mut sets = d
                .expression
                .entries()
                .iter()
                .map(|e| members_of(&roles, &e.subject, &e.trail));
            let first = sets.next().unwrap_or_default();
            let derived = sets.fold(first, |acc, s| acc.intersection(&s).copied().collect());
            let role = roles.entry((d.issuer, d.attribute.clone())).or_default();
            for m in derived {
                changed |= role.insert(m);
            }
        }
        if !changed {
            break;
        }
    }
    roles
        .get(&(*issuer_pub, attribute.clone()))
        .is_some_and(|m| m.contains(subject_pub))
}
