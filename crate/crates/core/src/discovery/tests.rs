use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::delegation::{add_delegation, remove_delegation};
use crate::generator::{Bounds, Instance};
use crate::keys::generate_namespace;
use crate::namestore::Namespace;
use crate::netsim::{BackendError, LookupStats, MemoryBackend, QueryKey};
use crate::record::{Expiration, RecordSet};
use crate::scenario::Scenario;

const T0: Timestamp = Timestamp(1_700_000_000_000_000);

fn label(s: &str) -> Label {
    s.parse().unwrap()
}

fn published() -> (Scenario, MemoryBackend) {
    let mut s = Scenario::build(T0);
    let mut backend = MemoryBackend::new();
    assert!(s.publish_all(&mut backend, T0).is_empty());
    (s, backend)
}

fn run(s: &Scenario, backend: &mut MemoryBackend, who: &str, creds: &[Credential]) -> DiscoveryRun {
    discover_traced(
        &s.key("S"),
        &label("user"),
        &s.key(who),
        creds,
        backend,
        T0,
        &Limits::default(),
    )
}

#[test]
fn rewrite_appends_pending_suffix() {
    let s = Scenario::build(T0);
    let dco = AttributeTrail::parse(&["dco"]).unwrap();
    let nada = DelegationSetEntry::direct(s.key("NADA"));
    assert_eq!(
        rewrite(&nada, &dco, 16).unwrap().render(&s.names),
        "NADA.dco"
    );
    let usada = DelegationSetEntry::new(
        s.key("USADA"),
        AttributeTrail::parse(&["contractor"]).unwrap(),
    );
    assert_eq!(
        rewrite(&usada, &dco, 16).unwrap().render(&s.names),
        "USADA.contractor.dco"
    );
    let x = DelegationSetEntry::direct(s.key("C2"));
    assert_eq!(rewrite(&x, &AttributeTrail::empty(), 16).unwrap(), x);
    assert_eq!(
        rewrite(&usada, &dco, 1),
        Err(DiscoveryError::LimitExceeded(LimitKind::TrailLength))
    );
}

#[test]
fn bob_scenario_trace() {
    let (s, mut backend) = published();
    let r = run(&s, &mut backend, "Bob", &s.creds("Bob"));
    let chain = r.result.unwrap().expect("Bob holds S.user");
    let trace: Vec<String> = r.trace.iter().map(|e| e.render(&s.names)).collect();
    assert_eq!(
        trace,
        [
            "resolve S.user -> WADA.nado.dco",
            "resolve WADA.nado -> NADA | USADA",
            "rewrite WADA.nado.dco -> NADA.dco",
            "rewrite WADA.nado.dco -> USADA.dco",
            "resolve NADA.dco -> C1.dco",
            "no credential for C1.dco",
            "resolve USADA.dco -> USADA.contractor.dco",
            "resolve USADA.contractor -> C2",
            "rewrite USADA.contractor.dco -> C2.dco",
            "resolve C2.dco -> C2.employee & C2.controller",
            "credential C2.employee <- Bob",
            "satisfied C2.employee",
            "credential C2.controller <- Bob",
            "satisfied C2.controller",
            "satisfied C2.dco",
            "satisfied USADA.contractor.dco",
            "satisfied USADA.dco",
            "satisfied WADA.nado.dco",
            "satisfied S.user",
        ]
    );
    assert_eq!(r.lookups, 6);
    let mut leaves = chain.leaves();
    leaves.sort();
    let mut want = s.creds("Bob");
    want.sort();
    assert_eq!(leaves, want);
    assert!(verify_chain(&chain, &s.key("Bob"), &mut backend, T0));
}

#[test]
fn bob_employee_only_is_denied() {
    let (s, mut backend) = published();
    let creds = [s.cred("Bob", "C2", "employee")];
    let r = run(&s, &mut backend, "Bob", &creds);
    assert_eq!(r.result, Ok(None));
    assert!(!oracle_entailed(
        &s.delegations(),
        &creds,
        &s.key("S"),
        &label("user"),
        &s.key("Bob")
    ));
}

#[test]
fn alice_through_nada() {
    let (s, mut backend) = published();
    let r = run(&s, &mut backend, "Alice", &s.creds("Alice"));
    let chain = r.result.unwrap().unwrap();
    assert_eq!(chain.leaves(), s.creds("Alice"));
    assert_eq!(r.lookups, 3);
    let steps: Vec<String> = chain
        .steps()
        .iter()
        .map(|st| {
            format!(
                "{}.{} <- {}",
                s.names.display(&st.namespace),
                st.label,
                st.record.render(&s.names)
            )
        })
        .collect();
    assert_eq!(
        steps,
        [
            "S.user <- WADA.nado.dco",
            "WADA.nado <- NADA",
            "NADA.dco <- C1.dco"
        ]
    );
}

#[test]
fn stranger_is_denied() {
    let (s, mut backend) = published();
    let stranger = generate_namespace(Some([77; 32])).public_key();
    let r = discover(
        &s.key("S"),
        &label("user"),
        &stranger,
        &[],
        &mut backend,
        T0,
        &Limits::default(),
    );
    assert_eq!(r, Ok(None));
}

#[test]
fn foreign_and_expired_credentials_are_ignored() {
    let (s, mut backend) = published();
    // Bob presenting Alice's credential
    let r = run(&s, &mut backend, "Bob", &s.creds("Alice"));
    assert_eq!(r.result, Ok(None));
    let late = discover(
        &s.key("S"),
        &label("user"),
        &s.key("Bob"),
        &s.creds("Bob"),
        &mut backend,
        T0.saturating_add(Duration::from_secs(31 * 86_400)),
        &Limits::default(),
    );
    assert_eq!(late, Ok(None));
}

#[test]
fn oracle_fixture_cases() {
    let s = Scenario::build(T0);
    let all = s.all_credentials();
    let user = label("user");
    assert!(oracle_entailed(
        &s.delegations(),
        &all,
        &s.key("S"),
        &user,
        &s.key("Bob")
    ));
    assert!(oracle_entailed(
        &s.delegations(),
        &all,
        &s.key("S"),
        &user,
        &s.key("Alice")
    ));
    let stranger = generate_namespace(Some([77; 32])).public_key();
    assert!(!oracle_entailed(
        &s.delegations(),
        &all,
        &s.key("S"),
        &user,
        &stranger
    ));
    let cut: Vec<_> = s
        .delegations()
        .into_iter()
        .filter(|d| !(d.issuer == s.key("WADA") && d.attribute.as_str() == "nado"))
        .collect();
    for who in ["Bob", "Alice"] {
        assert!(!oracle_entailed(
            &cut,
            &all,
            &s.key("S"),
            &user,
            &s.key(who)
        ));
    }
}

struct Graph {
    namespaces: Vec<Namespace>,
}

impl Graph {
    fn new(n: u8) -> Self {
        Graph {
            namespaces: (0..n)
                .map(|i| Namespace::new(generate_namespace(Some([i + 100; 32])), None))
                .collect(),
        }
    }

    fn pk(&self, i: usize) -> PublicKey {
        self.namespaces[i].public_key()
    }

    fn entry(&self, i: usize, trail: &[&str]) -> DelegationSetEntry {
        DelegationSetEntry::new(self.pk(i), AttributeTrail::parse(trail).unwrap())
    }

    fn delegate(&mut self, issuer: usize, attr: &str, entries: Vec<DelegationSetEntry>) {
        let expr = DelegationExpression::new(entries).unwrap();
        add_delegation(
            &mut self.namespaces[issuer],
            attr,
            &expr,
            Expiration::Absolute(T0.saturating_add(Duration::from_secs(86_400))),
        )
        .unwrap();
    }

    fn cred(&self, issuer: usize, attr: &str, subject: PublicKey) -> Credential {
        crate::credential::issue_credential(
            self.namespaces[issuer].key(),
            subject,
            attr,
            Duration::from_secs(3600),
            T0,
        )
        .unwrap()
    }

    fn backend(&mut self) -> MemoryBackend {
        let mut b = MemoryBackend::new();
        for ns in &mut self.namespaces {
            assert!(ns.publish(&mut b, T0).is_complete());
        }
        b
    }
}

#[test]
fn cycles_terminate() {
    let mut g = Graph::new(3);
    let subject = g.pk(2);
    g.delegate(0, "a", vec![g.entry(1, &["b"])]);
    g.delegate(1, "b", vec![g.entry(0, &["a"])]);
    let mut b = g.backend();
    let none = discover_traced(
        &g.pk(0),
        &label("a"),
        &subject,
        &[],
        &mut b,
        T0,
        &Limits::default(),
    );
    assert_eq!(none.result, Ok(None));
    assert_eq!(none.lookups, 2);
    let cred = g.cred(1, "b", subject);
    let some = discover(
        &g.pk(0),
        &label("a"),
        &subject,
        std::slice::from_ref(&cred),
        &mut b,
        T0,
        &Limits::default(),
    )
    .unwrap();
    let chain = some.unwrap();
    assert_eq!(chain.leaves(), vec![cred]);
    assert!(verify_chain(&chain, &subject, &mut b, T0));
}

#[test]
fn left_recursive_linked_roles_terminate() {
    // A.a <- A.a.b ; A.a <- B ; B.b <- C ; C.b <- subject
    let mut g = Graph::new(4);
    let subject = g.pk(3);
    g.delegate(0, "a", vec![g.entry(0, &["a", "b"])]);
    g.delegate(0, "a", vec![g.entry(1, &[])]);
    g.delegate(1, "b", vec![g.entry(2, &[])]);
    g.delegate(2, "b", vec![g.entry(3, &[])]);
    let mut b = g.backend();
    let chain = discover(
        &g.pk(0),
        &label("a"),
        &subject,
        &[],
        &mut b,
        T0,
        &Limits::default(),
    )
    .unwrap()
    .expect("subject reached through two rounds of A.a.b");
    assert!(verify_chain(&chain, &subject, &mut b, T0));
    let other = generate_namespace(Some([9; 32])).public_key();
    assert_eq!(
        discover(
            &g.pk(0),
            &label("a"),
            &other,
            &[],
            &mut b,
            T0,
            &Limits::default()
        ),
        Ok(None)
    );
}

#[test]
fn intersection_needs_every_entry() {
    let mut g = Graph::new(3);
    let subject = g.pk(2);
    g.delegate(0, "a", vec![g.entry(1, &["x"]), g.entry(1, &["y"])]);
    let mut b = g.backend();
    let x = g.cred(1, "x", subject);
    let y = g.cred(1, "y", subject);
    let lim = Limits::default();
    assert_eq!(
        discover(
            &g.pk(0),
            &label("a"),
            &subject,
            std::slice::from_ref(&x),
            &mut b,
            T0,
            &lim
        ),
        Ok(None)
    );
    assert_eq!(
        discover(
            &g.pk(0),
            &label("a"),
            &subject,
            std::slice::from_ref(&y),
            &mut b,
            T0,
            &lim
        ),
        Ok(None)
    );
    let chain = discover(&g.pk(0), &label("a"), &subject, &[x, y], &mut b, T0, &lim)
        .unwrap()
        .unwrap();
    assert_eq!(chain.leaves().len(), 2);
}

#[test]
fn entity_intersection_with_linked_entry() {
    // A.a <- B & C.r.s : the subject B must also hold C.r.s
    let mut g = Graph::new(4);
    let subject = g.pk(1);
    g.delegate(0, "a", vec![g.entry(1, &[]), g.entry(2, &["r", "s"])]);
    g.delegate(2, "r", vec![g.entry(3, &[])]);
    let mut b = g.backend();
    let lim = Limits::default();
    assert_eq!(
        discover(&g.pk(0), &label("a"), &subject, &[], &mut b, T0, &lim),
        Ok(None)
    );
    let s_cred = g.cred(3, "s", subject);
    let chain = discover(&g.pk(0), &label("a"), &subject, &[s_cred], &mut b, T0, &lim)
        .unwrap()
        .unwrap();
    assert!(verify_chain(&chain, &subject, &mut b, T0));
}

#[test]
fn credentials_feed_linked_heads() {
    // A.a <- B.r.s with the subject holding B.r directly is not enough;
    // the subject must hold (member of B.r).s. Here the subject is a member
    // of B.r by credential and of itself.s via its own delegation.
    let mut g = Graph::new(3);
    let subject = g.pk(2);
    g.delegate(0, "a", vec![g.entry(1, &["r", "s"])]);
    g.delegate(2, "s", vec![g.entry(2, &[])]);
    let mut b = g.backend();
    let r = g.cred(1, "r", subject);
    let chain = discover(
        &g.pk(0),
        &label("a"),
        &subject,
        &[r],
        &mut b,
        T0,
        &Limits::default(),
    )
    .unwrap()
    .unwrap();
    assert!(verify_chain(&chain, &subject, &mut b, T0));
}

#[test]
fn limits_are_enforced() {
    let (s, mut backend) = published();
    let tight = Limits {
        max_lookups: 2,
        ..Limits::default()
    };
    let r = discover(
        &s.key("S"),
        &label("user"),
        &s.key("Bob"),
        &s.creds("Bob"),
        &mut backend,
        T0,
        &tight,
    );
    assert_eq!(r, Err(DiscoveryError::LimitExceeded(LimitKind::Lookups)));
    let tight = Limits {
        max_nodes: 3,
        ..Limits::default()
    };
    let r = discover(
        &s.key("S"),
        &label("user"),
        &s.key("Bob"),
        &s.creds("Bob"),
        &mut backend,
        T0,
        &tight,
    );
    assert_eq!(r, Err(DiscoveryError::LimitExceeded(LimitKind::Nodes)));
    let short = Limits {
        max_trail_len: 1,
        ..Limits::default()
    };
    let r = discover(
        &s.key("S"),
        &label("user"),
        &s.key("Bob"),
        &s.creds("Bob"),
        &mut backend,
        T0,
        &short,
    );
    assert_eq!(
        r,
        Err(DiscoveryError::LimitExceeded(LimitKind::TrailLength))
    );
}

#[test]
fn each_role_is_resolved_once() {
    let (s, mut backend) = published();
    let before = backend.stats().lookups;
    let r = run(&s, &mut backend, "Bob", &[s.cred("Bob", "C2", "employee")]);
    let lookups = backend.stats().lookups - before;
    assert_eq!(lookups as usize, r.lookups);
    let resolved: Vec<_> = r
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Resolve {
                namespace, label, ..
            } => Some((*namespace, label.clone())),
            _ => None,
        })
        .collect();
    let mut distinct = resolved.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), resolved.len());
    // S.user, WADA.nado, NADA.dco, USADA.dco, USADA.contractor, C2.dco,
    // then the set-aside C1.dco, C2.employee and C2.controller
    assert_eq!(resolved.len(), 9);
}

/// Fails every lookup of the listed keys.
struct Flaky {
    inner: MemoryBackend,
    down: Vec<QueryKey>,
}

impl NameSystemBackend for Flaky {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        self.inner.put(key, set)
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        if self.down.contains(key) {
            return Err(BackendError::AllReplicasDown(*key));
        }
        self.inner.get(key, clock)
    }

    fn stats(&self) -> LookupStats {
        self.inner.stats()
    }
}

#[test]
fn network_failures_are_not_denials() {
    let (s, backend) = published();
    let c2_dco = crate::netsim::derive_query_key(&s.key("C2"), &label("dco"));
    let mut flaky = Flaky {
        inner: backend,
        down: vec![c2_dco],
    };
    let lim = Limits::default();
    let bob = discover_traced(
        &s.key("S"),
        &label("user"),
        &s.key("Bob"),
        &s.creds("Bob"),
        &mut flaky,
        T0,
        &lim,
    );
    assert_eq!(
        bob.result,
        Err(DiscoveryError::Backend(ResolveError::AllReplicasDown))
    );
    assert!(bob.result.as_ref().unwrap_err().is_network());
    assert!(bob
        .trace
        .iter()
        .any(|e| matches!(e, TraceEvent::ResolveFailed { .. })));
    // Alice's chain does not need C2.dco
    let alice = discover(
        &s.key("S"),
        &label("user"),
        &s.key("Alice"),
        &s.creds("Alice"),
        &mut flaky,
        T0,
        &lim,
    );
    assert!(alice.unwrap().is_some());
}

#[test]
fn removal_invalidates_chain() {
    let (mut s, mut backend) = published();
    let chain = run(&s, &mut backend, "Bob", &s.creds("Bob"))
        .result
        .unwrap()
        .unwrap();
    let expr = s.expression("C2");
    remove_delegation(s.namespace_mut("USADA"), "contractor", &expr).unwrap();
    assert!(s.publish_all(&mut backend, T0).is_empty());
    assert!(!verify_chain(&chain, &s.key("Bob"), &mut backend, T0));
    assert_eq!(
        run(&s, &mut backend, "Bob", &s.creds("Bob")).result,
        Ok(None)
    );
}

#[test]
fn chain_bound_to_subject() {
    let (s, mut backend) = published();
    let chain = run(&s, &mut backend, "Bob", &s.creds("Bob"))
        .result
        .unwrap()
        .unwrap();
    assert!(!verify_chain(&chain, &s.key("Alice"), &mut backend, T0));
    let mut swapped = chain.clone();
    swapped.subject = s.key("Alice");
    assert!(!verify_chain(&swapped, &s.key("Alice"), &mut backend, T0));
}

#[test]
fn mutated_chains_fail_verification() {
    let (s, mut backend) = published();
    let chain = run(&s, &mut backend, "Bob", &s.creds("Bob"))
        .result
        .unwrap()
        .unwrap();
    let bob = s.key("Bob");

    fn first_record(p: &mut Proof, f: &mut dyn FnMut(&mut Vec<Proof>) -> bool) -> bool {
        match p {
            Proof::Record { entries, .. } => {
                f(entries) || entries.iter_mut().any(|e| first_record(e, f))
            }
            Proof::Link { head, tail, .. } => first_record(head, f) || first_record(tail, f),
            _ => false,
        }
    }

    // drop one entry of the intersection
    let mut dropped = chain.clone();
    assert!(first_record(&mut dropped.proof, &mut |entries| {
        if entries.len() == 2 {
            entries.pop();
            true
        } else {
            false
        }
    }));
    let diag = verify_chain_diagnostics(&dropped, &bob, &mut backend, T0);
    assert!(!diag.is_empty());

    // expired leaf
    let late = T0.saturating_add(Duration::from_secs(31 * 86_400));
    assert!(!verify_chain(&chain, &bob, &mut backend, late));
}

fn instance_roots(inst: &Instance, seed: u64) -> Vec<(PublicKey, Label)> {
    (0..4)
        .map(|i| inst.pick_root(seed.wrapping_add(i)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn discovery_agrees_with_oracle(seed in any::<u64>()) {
        let inst = Instance::generate(seed, &Bounds::default(), T0);
        let mut backend = MemoryBackend::new();
        inst.publish(&mut backend, T0, T0.saturating_add(Duration::from_secs(3600)));
        for (issuer, attr) in instance_roots(&inst, seed) {
            let expected = oracle_entailed(&inst.delegations, &inst.credentials, &issuer, &attr, &inst.subject);
            let got = discover(&issuer, &attr, &inst.subject, &inst.credentials, &mut backend, T0, &Limits::default());
            let chain = got.expect("no limits hit at these sizes");
            prop_assert_eq!(chain.is_some(), expected);
            if let Some(chain) = chain {
                let diag = verify_chain_diagnostics(&chain, &inst.subject, &mut backend, T0);
                prop_assert!(diag.is_empty(), "{:?}", diag);
            }
        }
    }

    #[test]
    fn discovery_is_monotone(seed in any::<u64>(), extra in any::<u64>()) {
        let base = Instance::generate(seed, &Bounds::default(), T0);
        let more = Instance::generate(extra, &Bounds::default(), T0);
        // graft the other instance's delegations onto base keys by position
        let mut bigger = base.clone();
        for d in &more.delegations {
            let idx = more.keys.iter().position(|k| k.public_key() == d.issuer).unwrap();
            if idx < base.keys.len() {
                let remap = |pk: PublicKey| {
                    more.keys
                        .iter()
                        .position(|k| k.public_key() == pk)
                        .filter(|&i| i < base.keys.len())
                        .map(|i| base.keys[i].public_key())
                        .unwrap_or(base.subject)
                };
                let entries = d
                    .expression
                    .entries()
                    .iter()
                    .map(|e| DelegationSetEntry::new(remap(e.subject), e.trail.clone()))
                    .collect();
                let nd = OracleDelegation {
                    issuer: base.keys[idx].public_key(),
                    attribute: d.attribute.clone(),
                    expression: DelegationExpression::new(entries).unwrap(),
                };
                if !bigger.delegations.contains(&nd) {
                    bigger.delegations.push(nd);
                }
            }
        }
        let mut small_b = MemoryBackend::new();
        base.publish(&mut small_b, T0, T0.saturating_add(Duration::from_secs(3600)));
        let mut big_b = MemoryBackend::new();
        bigger.publish(&mut big_b, T0, T0.saturating_add(Duration::from_secs(3600)));
        for (issuer, attr) in instance_roots(&base, extra) {
            let small = discover(&issuer, &attr, &base.subject, &base.credentials, &mut small_b, T0, &Limits::default()).unwrap();
            if small.is_some() {
                let big = discover(&issuer, &attr, &bigger.subject, &bigger.credentials, &mut big_b, T0, &Limits::default()).unwrap();
                prop_assert!(big.is_some());
            }
        }
    }

    #[test]
    fn discovery_is_deterministic(seed in any::<u64>()) {
        let inst = Instance::generate(seed, &Bounds::default(), T0);
        let mut backend = MemoryBackend::new();
        inst.publish(&mut backend, T0, T0.saturating_add(Duration::from_secs(3600)));
        let (issuer, attr) = inst.pick_root(seed);
        let a = discover_traced(&issuer, &attr, &inst.subject, &inst.credentials, &mut backend, T0, &Limits::default());
        let b = discover_traced(&issuer, &attr, &inst.subject, &inst.credentials, &mut backend, T0, &Limits::default());
        prop_assert_eq!(a.result, b.result);
        prop_assert_eq!(a.trace, b.trace);
    }
}
