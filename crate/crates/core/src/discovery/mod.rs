//! Delegation chain discovery.
//!
//! Starting from the root role `A.a`, discovery resolves `ATTR` records
//! through the name system and checks every delegation subject against the
//! subject's credentials, until the subject is shown to hold `A.a` or no
//! resolvable record is left to try.
//!
//! Every expression `K.b1...bn` met during the search is a node of the
//! delegation graph; nodes are tabled, so each one is expanded once and
//! cycles (`A.a <- B.b`, `B.b <- A.a`) terminate. A single-label node
//! `K.b` is expanded by `resolve(b, K, "ATTR")`; each record is one OR
//! alternative and its entries form an AND group. A linked node
//! `K.b1.b2...bn` is expanded by resolving `K.b1` and rewriting the
//! expression for each member `Y` found there to `Y.b2...bn`. Membership
//! facts flow back up the graph as they are derived ("backtracking"), and
//! every fact remembers the first reason it was derived, which is how the
//! proof is rebuilt once the root is reached.
//!
//! Resolution order: the root, the first attribute of every linked
//! expression and every rewritten expression are expanded breadth-first.
//! Plain `B.b` entries that no credential matches are set aside and only
//! resolved once nothing else is pending, so a branch that dead-ends at a
//! credential check costs no lookup when another branch succeeds.

mod chain;
mod oracle;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{verify_chain, verify_chain_diagnostics, ChainStep, DelegationChain, Proof};
pub use oracle::{oracle_entailed, OracleDelegation};

use crate::credential::Credential;
use crate::delegation::{
    decode_attr_payload, AttributeTrail, DelegationExpression, DelegationSetEntry,
    DEFAULT_MAX_TRAIL_LEN,
};
use crate::keys::PublicKey;
use crate::netsim::{resolve, NameSystemBackend, ResolveError};
use crate::petname::PetnameTable;
use crate::record::{Label, RecordType};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_trail_len: usize,
    pub max_nodes: usize,
    pub max_lookups: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_trail_len: DEFAULT_MAX_TRAIL_LEN,
            max_nodes: 10_000,
            max_lookups: 1_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitKind {
    TrailLength,
    Nodes,
    Lookups,
}

impl fmt::Display for LimitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitKind::TrailLength => "max_trail_len",
            LimitKind::Nodes => "max_nodes",
            LimitKind::Lookups => "max_lookups",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("discovery limit exceeded: {0}")]
    LimitExceeded(LimitKind),
    /// Some lookup failed and no chain was found in what could be resolved.
    /// The answer is unknown, not negative.
    #[error("name system failure during discovery: {0}")]
    Backend(ResolveError),
}

impl DiscoveryError {
    pub fn is_network(&self) -> bool {
        matches!(self, DiscoveryError::Backend(e) if e.is_network())
    }
}

/// Appends `pending_suffix` to the trail of a resolved entry.
pub fn rewrite(
    entry: &DelegationSetEntry,
    pending_suffix: &AttributeTrail,
    max_trail_len: usize,
) -> Result<DelegationSetEntry, DiscoveryError> {
    let trail = entry.trail.concat(pending_suffix);
    if trail.len() > max_trail_len {
        return Err(DiscoveryError::LimitExceeded(LimitKind::TrailLength));
    }
    Ok(DelegationSetEntry::new(entry.subject, trail))
}

/// One step of a discovery run, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    /// `resolve(label, namespace, "ATTR")` returned these records
    /// (none when the label is absent).
    Resolve {
        namespace: PublicKey,
        label: Label,
        records: Vec<DelegationExpression>,
    },
    ResolveFailed {
        namespace: PublicKey,
        label: Label,
        error: String,
    },
    /// `namespace.trail` rewritten through a member `via` of its first attribute.
    Rewrite {
        namespace: PublicKey,
        trail: AttributeTrail,
        via: PublicKey,
    },
    /// A delegation entry `namespace.label` the subject holds no credential for.
    NoCredential {
        namespace: PublicKey,
        label: Label,
    },
    CredentialMatch {
        credential: Credential,
    },
    /// The subject was shown to be a member of `namespace.trail`.
    Satisfied {
        namespace: PublicKey,
        trail: AttributeTrail,
    },
}

fn expr_text(names: &PetnameTable, ns: &PublicKey, trail: &AttributeTrail) -> String {
    DelegationSetEntry::new(*ns, trail.clone()).render(names)
}

impl TraceEvent {
    pub fn render(&self, names: &PetnameTable) -> String {
        match self {
            TraceEvent::Resolve {
                namespace,
                label,
                records,
            } => {
                let role = format!("{}.{}", names.display(namespace), label);
                if records.is_empty() {
                    format!("resolve {role}: no records")
                } else {
                    let alts: Vec<_> = records.iter().map(|r| r.render(names)).collect();
                    format!("resolve {role} -> {}", alts.join(" | "))
                }
            }
            TraceEvent::ResolveFailed {
                namespace,
                label,
                error,
            } => format!(
                "resolve {}.{} failed: {error}",
                names.display(namespace),
                label
            ),
            TraceEvent::Rewrite {
                namespace,
                trail,
                via,
            } => format!(
                "rewrite {} -> {}",
                expr_text(names, namespace, trail),
                expr_text(names, via, &trail.rest())
            ),
            TraceEvent::NoCredential { namespace, label } => {
                format!("no credential for {}.{}", names.display(namespace), label)
            }
            TraceEvent::CredentialMatch { credential } => format!(
                "credential {}.{} <- {}",
                names.display(&credential.issuer),
                credential.attribute,
                names.display(&credential.subject)
            ),
            TraceEvent::Satisfied { namespace, trail } => {
                format!("satisfied {}", expr_text(names, namespace, trail))
            }
        }
    }
}

/// Everything a discovery run produced, including its trace when the run
/// ended in an error.
#[derive(Debug, Clone)]
pub struct DiscoveryRun {
    pub result: Result<Option<DelegationChain>, DiscoveryError>,
    pub trace: Vec<TraceEvent>,
    /// Calls to `resolve`.
    pub lookups: usize,
    pub nodes: usize,
}

/// Finds a delegation chain proving `subject_pub` holds `issuer_pub.attribute`.
///
/// `Ok(None)` means no chain exists in the records that could be resolved.
/// When a lookup failed and no chain was found, the result is
/// [`DiscoveryError::Backend`] instead.
pub fn discover(
    issuer_pub: &PublicKey,
    attribute: &Label,
    subject_pub: &PublicKey,
    subject_creds: &[Credential],
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: &Limits,
) -> Result<Option<DelegationChain>, DiscoveryError> {
    discover_traced(
        issuer_pub,
        attribute,
        subject_pub,
        subject_creds,
        backend,
        clock,
        limits,
    )
    .result
}

pub fn discover_traced(
    issuer_pub: &PublicKey,
    attribute: &Label,
    subject_pub: &PublicKey,
    subject_creds: &[Credential],
    backend: &mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: &Limits,
) -> DiscoveryRun {
    let creds: Vec<Credential> = subject_creds
        .iter()
        .filter(|c| c.subject == *subject_pub && c.verify(clock))
        .cloned()
        .collect();
    let mut search = Search {
        subject: *subject_pub,
        creds,
        backend,
        clock,
        limits: *limits,
        nodes: Vec::new(),
        index: HashMap::new(),
        worklist: VecDeque::new(),
        eager: VecDeque::new(),
        deferred: VecDeque::new(),
        trace: Vec::new(),
        lookups: 0,
        errors: Vec::new(),
        trail_skipped: false,
        root: 0,
        done: false,
    };
    let result = search.run(issuer_pub, attribute);
    DiscoveryRun {
        result,
        trace: search.trace,
        lookups: search.lookups,
        nodes: search.nodes.len(),
    }
}

type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Root,
    Head,
    Tail,
    Entry,
}

#[derive(Debug, Clone, Copy)]
enum Reason {
    Entity,
    Credential(usize),
    Record(usize),
    Link(PublicKey),
}

#[derive(Debug, Clone, Copy)]
enum Watch {
    Group { role: NodeId, group: usize },
    LinkHead { linked: NodeId },
    LinkTail { linked: NodeId, via: PublicKey },
}

struct Node {
    ns: PublicKey,
    trail: AttributeTrail,
    members: BTreeMap<PublicKey, Reason>,
    watchers: Vec<Watch>,
    resolved: bool,
    records: Vec<DelegationExpression>,
    groups: Vec<Vec<NodeId>>,
}

struct Search<'a> {
    subject: PublicKey,
    creds: Vec<Credential>,
    backend: &'a mut dyn NameSystemBackend,
    clock: Timestamp,
    limits: Limits,
    nodes: Vec<Node>,
    index: HashMap<(PublicKey, AttributeTrail), NodeId>,
    worklist: VecDeque<(NodeId, PublicKey)>,
    eager: VecDeque<NodeId>,
    deferred: VecDeque<NodeId>,
    trace: Vec<TraceEvent>,
    lookups: usize,
    errors: Vec<ResolveError>,
    trail_skipped: bool,
    root: NodeId,
    done: bool,
}

impl Search<'_> {
    fn run(
        &mut self,
        issuer: &PublicKey,
        attribute: &Label,
    ) -> Result<Option<DelegationChain>, DiscoveryError> {
        let root_trail = AttributeTrail::new(vec![attribute.clone()]);
        self.root = self
            .ensure(*issuer, root_trail, Origin::Root)?
            .ok_or(DiscoveryError::LimitExceeded(LimitKind::TrailLength))?;
        self.drain()?;
        while !self.done {
            let Some(next) = self.eager.pop_front().or_else(|| self.deferred.pop_front()) else {
                break;
            };
            if self.nodes[next].resolved {
                continue;
            }
            if self.lookups >= self.limits.max_lookups {
                return Err(DiscoveryError::LimitExceeded(LimitKind::Lookups));
            }
            self.expand(next)?;
            self.drain()?;
        }
        if self.done {
            let proof = self.proof(self.root, self.subject);
            return Ok(Some(DelegationChain {
                issuer: *issuer,
                attribute: attribute.clone(),
                subject: self.subject,
                proof,
            }));
        }
        if let Some(e) = self.errors.first() {
            return Err(DiscoveryError::Backend(e.clone()));
        }
        if self.trail_skipped {
            return Err(DiscoveryError::LimitExceeded(LimitKind::TrailLength));
        }
        Ok(None)
    }

    fn ensure(
        &mut self,
        ns: PublicKey,
        trail: AttributeTrail,
        origin: Origin,
    ) -> Result<Option<NodeId>, DiscoveryError> {
        if trail.len() > self.limits.max_trail_len {
            self.trail_skipped = true;
            return Ok(None);
        }
        if let Some(&id) = self.index.get(&(ns, trail.clone())) {
            if origin != Origin::Entry && trail.len() == 1 && !self.nodes[id].resolved {
                self.eager.push_back(id);
            }
            return Ok(Some(id));
        }
        if self.nodes.len() >= self.limits.max_nodes {
            return Err(DiscoveryError::LimitExceeded(LimitKind::Nodes));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            ns,
            trail: trail.clone(),
            members: BTreeMap::new(),
            watchers: Vec::new(),
            resolved: false,
            records: Vec::new(),
            groups: Vec::new(),
        });
        self.index.insert((ns, trail.clone()), id);
        match trail.len() {
            0 => self.add_member(id, ns, Reason::Entity),
            1 => {
                let attr = &trail.labels()[0];
                let matched = self
                    .creds
                    .iter()
                    .position(|c| c.issuer == ns && c.attribute == *attr);
                match matched {
                    Some(i) => {
                        self.trace.push(TraceEvent::CredentialMatch {
                            credential: self.creds[i].clone(),
                        });
                        self.add_member(id, self.subject, Reason::Credential(i));
                    }
                    None if origin == Origin::Entry => self.trace.push(TraceEvent::NoCredential {
                        namespace: ns,
                        label: attr.clone(),
                    }),
                    None => {}
                }
                if origin == Origin::Entry {
                    self.deferred.push_back(id);
                } else {
                    self.eager.push_back(id);
                }
            }
            _ => {
                let head_trail = AttributeTrail::new(vec![trail.labels()[0].clone()]);
                let head = self
                    .ensure(ns, head_trail, Origin::Head)?
                    .expect("single label is within any trail limit");
                self.nodes[head]
                    .watchers
                    .push(Watch::LinkHead { linked: id });
                let existing: Vec<PublicKey> = self.nodes[head].members.keys().copied().collect();
                for y in existing {
                    self.instantiate_tail(id, y)?;
                }
            }
        }
        Ok(Some(id))
    }

    fn instantiate_tail(&mut self, linked: NodeId, via: PublicKey) -> Result<(), DiscoveryError> {
        let node = &self.nodes[linked];
        let ns = node.ns;
        let trail = node.trail.clone();
        let tail_entry = rewrite(
            &DelegationSetEntry::direct(via),
            &trail.rest(),
            self.limits.max_trail_len,
        )?;
        self.trace.push(TraceEvent::Rewrite {
            namespace: ns,
            trail,
            via,
        });
        let Some(tail) = self.ensure(tail_entry.subject, tail_entry.trail, Origin::Tail)? else {
            return Ok(());
        };
        self.nodes[tail]
            .watchers
            .push(Watch::LinkTail { linked, via });
        let existing: Vec<PublicKey> = self.nodes[tail].members.keys().copied().collect();
        for x in existing {
            self.add_member(linked, x, Reason::Link(via));
        }
        Ok(())
    }

    fn add_member(&mut self, node: NodeId, member: PublicKey, reason: Reason) {
        let n = &mut self.nodes[node];
        if n.members.contains_key(&member) {
            return;
        }
        n.members.insert(member, reason);
        if member == self.subject {
            self.trace.push(TraceEvent::Satisfied {
                namespace: n.ns,
                trail: n.trail.clone(),
            });
            if node == self.root {
                self.done = true;
            }
        }
        self.worklist.push_back((node, member));
    }

    fn check_group(&mut self, role: NodeId, group: usize, member: PublicKey) {
        let all = self.nodes[role].groups[group]
            .iter()
            .all(|&e| self.nodes[e].members.contains_key(&member));
        if all {
            self.add_member(role, member, Reason::Record(group));
        }
    }

    fn drain(&mut self) -> Result<(), DiscoveryError> {
        while let Some((node, member)) = self.worklist.pop_front() {
            if self.done {
                self.worklist.clear();
                break;
            }
            let watchers = self.nodes[node].watchers.clone();
            for w in watchers {
                match w {
                    Watch::Group { role, group } => self.check_group(role, group, member),
                    Watch::LinkHead { linked } => self.instantiate_tail(linked, member)?,
                    Watch::LinkTail { linked, via } => {
                        self.add_member(linked, member, Reason::Link(via))
                    }
                }
                if self.done {
                    break;
                }
            }
        }
        Ok(())
    }

    fn expand(&mut self, id: NodeId) -> Result<(), DiscoveryError> {
        self.nodes[id].resolved = true;
        self.lookups += 1;
        let ns = self.nodes[id].ns;
        let label = self.nodes[id].trail.labels()[0].clone();
        let records = match resolve(
            label.as_str(),
            &ns,
            RecordType::Attr,
            self.backend,
            self.clock,
        ) {
            Ok(records) => records,
            Err(ResolveError::NotFound) => Vec::new(),
            Err(e) => {
                self.trace.push(TraceEvent::ResolveFailed {
                    namespace: ns,
                    label,
                    error: e.to_string(),
                });
                self.errors.push(e);
                return Ok(());
            }
        };
        let exprs: Vec<DelegationExpression> = records
            .iter()
            .filter_map(|r| decode_attr_payload(&r.payload).ok())
            .collect();
        self.trace.push(TraceEvent::Resolve {
            namespace: ns,
            label,
            records: exprs.clone(),
        });
        for expr in exprs {
            let mut members = Vec::with_capacity(expr.entries().len());
            for entry in expr.entries() {
                match self.ensure(entry.subject, entry.trail.clone(), Origin::Entry)? {
                    Some(e) => members.push(e),
                    None => break,
                }
            }
            if members.len() != expr.entries().len() {
                continue;
            }
            let group = self.nodes[id].groups.len();
            self.nodes[id].records.push(expr);
            self.nodes[id].groups.push(members.clone());
            for &e in &members {
                self.nodes[e]
                    .watchers
                    .push(Watch::Group { role: id, group });
            }
            let candidates: Vec<PublicKey> =
                self.nodes[members[0]].members.keys().copied().collect();
            for x in candidates {
                self.check_group(id, group, x);
            }
        }
        Ok(())
    }

    fn proof(&self, node: NodeId, member: PublicKey) -> Proof {
        let n = &self.nodes[node];
        match n.members[&member] {
            Reason::Entity => Proof::Entity { subject: member },
            Reason::Credential(i) => Proof::Credential(self.creds[i].clone()),
            Reason::Record(g) => Proof::Record {
                namespace: n.ns,
                attribute: n.trail.labels()[0].clone(),
                expression: n.records[g].clone(),
                entries: n.groups[g].iter().map(|&e| self.proof(e, member)).collect(),
            },
            Reason::Link(via) => {
                let head_trail = AttributeTrail::new(vec![n.trail.labels()[0].clone()]);
                let head = self.index[&(n.ns, head_trail)];
                let tail = self.index[&(via, n.trail.rest())];
                Proof::Link {
                    namespace: n.ns,
                    trail: n.trail.clone(),
                    via,
                    head: Box::new(self.proof(head, via)),
                    tail: Box::new(self.proof(tail, member)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
