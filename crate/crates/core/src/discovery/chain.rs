//! Delegation chains and their independent re-verification.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::credential::Credential;
use crate::delegation::{decode_attr_payload, AttributeTrail, DelegationExpression};
use crate::keys::PublicKey;
use crate::netsim::{resolve, NameSystemBackend, ResolveError};
use crate::petname::PetnameTable;
use crate::record::{Label, RecordType};
use crate::time::Timestamp;

/// Why a member belongs to an expression. Each variant proves membership of
/// one member in one expression:
///
/// - `Entity`: `subject` with an empty trail is `subject` itself.
/// - `Credential`: a credential `issuer.attribute <- subject`.
/// - `Record`: an `ATTR` record `namespace.attribute <- f1 & ... & fn` and a
///   proof for every entry.
/// - `Link`: `namespace.b1.b2...bn` holds the member because `via` holds
///   `namespace.b1` (`head`) and the member holds `via.b2...bn` (`tail`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proof {
    Entity {
        subject: PublicKey,
    },
    Credential(Credential),
    Record {
        namespace: PublicKey,
        attribute: Label,
        expression: DelegationExpression,
        entries: Vec<Proof>,
    },
    Link {
        namespace: PublicKey,
        trail: AttributeTrail,
        via: PublicKey,
        head: Box<Proof>,
        tail: Box<Proof>,
    },
}

/// One `ATTR` record used by a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub namespace: PublicKey,
    pub label: Label,
    pub record: DelegationExpression,
}

/// `D_{A.a,B}`: a proof that `subject` holds `issuer.attribute`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationChain {
    pub issuer: PublicKey,
    pub attribute: Label,
    pub subject: PublicKey,
    pub proof: Proof,
}

impl Proof {
    fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Proof)) {
        f(self);
        match self {
            Proof::Entity { .. } | Proof::Credential(_) => {}
            Proof::Record { entries, .. } => entries.iter().for_each(|p| p.walk(f)),
            Proof::Link { head, tail, .. } => {
                head.walk(f);
                tail.walk(f);
            }
        }
    }

    fn render_into(&self, names: &PetnameTable, depth: usize, out: &mut Vec<String>) {
        let pad = "  ".repeat(depth);
        match self {
            Proof::Entity { subject } => {
                out.push(format!("{pad}{} (entity)", names.display(subject)))
            }
            Proof::Credential(c) => out.push(format!(
                "{pad}credential {}.{} <- {}",
                names.display(&c.issuer),
                c.attribute,
                names.display(&c.subject)
            )),
            Proof::Record {
                namespace,
                attribute,
                expression,
                entries,
            } => {
                out.push(format!(
                    "{pad}{}.{} <- {}",
                    names.display(namespace),
                    attribute,
                    expression.render(names)
                ));
                entries
                    .iter()
                    .for_each(|p| p.render_into(names, depth + 1, out));
            }
            Proof::Link {
                namespace,
                trail,
                via,
                head,
                tail,
            } => {
                out.push(format!(
                    "{pad}{}.{} via {}",
                    names.display(namespace),
                    trail,
                    names.display(via)
                ));
                head.render_into(names, depth + 1, out);
                tail.render_into(names, depth + 1, out);
            }
        }
    }
}

impl DelegationChain {
    /// `C_{A.a}`: the credentials the chain ends in, deduplicated.
    pub fn leaves(&self) -> Vec<Credential> {
        let mut out: Vec<Credential> = Vec::new();
        self.proof.walk(&mut |p| {
            if let Proof::Credential(c) = p {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        });
        out
    }

    /// The records used, outermost first.
    pub fn steps(&self) -> Vec<ChainStep> {
        let mut out = Vec::new();
        self.proof.walk(&mut |p| {
            if let Proof::Record {
                namespace,
                attribute,
                expression,
                ..
            } = p
            {
                out.push(ChainStep {
                    namespace: *namespace,
                    label: attribute.clone(),
                    record: expression.clone(),
                });
            }
        });
        out
    }

    /// Indented proof tree, one line per node.
    pub fn render(&self, names: &PetnameTable) -> String {
        let mut lines = vec![format!(
            "{}.{} <- {}",
            names.display(&self.issuer),
            self.attribute,
            names.display(&self.subject)
        )];
        self.proof.render_into(names, 1, &mut lines);
        lines.join("\n")
    }
}

/// Re-checks a chain against the name system as it is now. True iff every
/// record used still resolves, every step follows the delegation rules,
/// every intersection is complete and every credential verifies and names
/// `subject_pub`.
pub fn verify_chain(
    chain: &DelegationChain,
    subject_pub: &PublicKey,
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
) -> bool {
    verify_chain_diagnostics(chain, subject_pub, backend, clock).is_empty()
}

/// Like [`verify_chain`], but lists every problem found. Empty means valid.
pub fn verify_chain_diagnostics(
    chain: &DelegationChain,
    subject_pub: &PublicKey,
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
) -> Vec<String> {
    let mut v = Verifier {
        subject: *subject_pub,
        backend,
        clock,
        cache: HashMap::new(),
        problems: Vec::new(),
    };
    if chain.subject != *subject_pub {
        v.problems.push("chain is for a different subject".into());
    }
    let root = AttributeTrail::new(vec![chain.attribute.clone()]);
    v.check(&chain.proof, &chain.issuer, &root, subject_pub);
    v.problems
}

struct Verifier<'a> {
    subject: PublicKey,
    backend: &'a mut dyn NameSystemBackend,
    clock: Timestamp,
    cache: HashMap<(PublicKey, Label), Result<Vec<DelegationExpression>, ResolveError>>,
    problems: Vec<String>,
}

impl Verifier<'_> {
    fn records(
        &mut self,
        ns: &PublicKey,
        label: &Label,
    ) -> Result<Vec<DelegationExpression>, ResolveError> {
        if let Some(hit) = self.cache.get(&(*ns, label.clone())) {
            return hit.clone();
        }
        let got = resolve(
            label.as_str(),
            ns,
            RecordType::Attr,
            self.backend,
            self.clock,
        )
        .map(|rs| {
            rs.iter()
                .filter_map(|r| decode_attr_payload(&r.payload).ok())
                .collect()
        });
        self.cache.insert((*ns, label.clone()), got.clone());
        got
    }

    /// Checks that `proof` shows `member` belongs to `ns.trail`.
    fn check(&mut self, proof: &Proof, ns: &PublicKey, trail: &AttributeTrail, member: &PublicKey) {
        match proof {
            Proof::Entity { subject } => {
                if !trail.is_empty() || subject != ns || subject != member {
                    self.problems.push(format!(
                        "entity {} does not match {}.{}",
                        subject.short(),
                        ns.short(),
                        trail
                    ));
                }
            }
            Proof::Credential(c) => {
                if trail.len() != 1 || c.issuer != *ns || c.attribute != trail.labels()[0] {
                    self.problems.push(format!(
                        "credential {} does not match {}.{}",
                        c.render(),
                        ns.short(),
                        trail
                    ));
                }
                if c.subject != *member || c.subject != self.subject {
                    self.problems
                        .push(format!("credential {} names another subject", c.render()));
                }
                if !c.verify(self.clock) {
                    self.problems
                        .push(format!("credential {} is invalid or expired", c.render()));
                }
            }
            Proof::Record {
                namespace,
                attribute,
                expression,
                entries,
            } => {
                if trail.len() != 1 || namespace != ns || *attribute != trail.labels()[0] {
                    self.problems.push(format!(
                        "record {}.{} used for {}.{}",
                        namespace.short(),
                        attribute,
                        ns.short(),
                        trail
                    ));
                }
                match self.records(namespace, attribute) {
                    Ok(found) if found.contains(expression) => {}
                    Ok(_) => self.problems.push(format!(
                        "record under {}.{} is no longer published",
                        namespace.short(),
                        attribute
                    )),
                    Err(e) => self.problems.push(format!(
                        "resolving {}.{}: {e}",
                        namespace.short(),
                        attribute
                    )),
                }
                if entries.len() != expression.entries().len() {
                    self.problems.push(format!(
                        "record {}.{} has {} entries but {} proofs",
                        namespace.short(),
                        attribute,
                        expression.entries().len(),
                        entries.len()
                    ));
                }
                for (entry, sub) in expression.entries().iter().zip(entries) {
                    self.check(sub, &entry.subject, &entry.trail, member);
                }
            }
            Proof::Link {
                namespace,
                trail: link_trail,
                via,
                head,
                tail,
            } => {
                if link_trail.len() < 2 || namespace != ns || link_trail != trail {
                    self.problems.push(format!(
                        "link {}.{} used for {}.{}",
                        namespace.short(),
                        link_trail,
                        ns.short(),
                        trail
                    ));
                    return;
                }
                let head_trail = AttributeTrail::new(vec![link_trail.labels()[0].clone()]);
                self.check(head, namespace, &head_trail, via);
                self.check(tail, via, &link_trail.rest(), member);
            }
        }
    }
}
