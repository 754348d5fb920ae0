//! A deterministic model of a replicated DHT with response caching.
//!
//! Nodes sit on a ring of 256-bit identifiers drawn from a seeded RNG. A set
//! stored under query key `k` lives on the `r` nodes that succeed `k` on the
//! ring. Lookups enter at an origin node, which answers from its response
//! cache when it can; otherwise the lookup is routed to the replicas (hop
//! count modelled as `ceil(log2 N)`) and the answer is cached at the origin
//! for `min(cache_ttl, set expiration - now)`. Failed nodes lose all state
//! and stay silent until healed.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{servable, validate_put, BackendError, LookupStats, NameSystemBackend, QueryKey};
use crate::record::RecordSet;
use crate::time::Timestamp;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DhtConfig {
    pub node_count: usize,
    pub replication_factor: usize,
    pub cache_ttl_us: u64,
    pub rng_seed: u64,
    pub hop_latency_us: u64,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig {
            node_count: 64,
            replication_factor: 5,
            cache_ttl_us: 3_600_000_000,
            rng_seed: 0,
            hop_latency_us: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhtError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
struct Node {
    id: [u8; 32],
    alive: bool,
    stored: BTreeMap<QueryKey, RecordSet>,
    cache: BTreeMap<QueryKey, (RecordSet, Timestamp)>,
}

#[derive(Debug, Clone)]
pub struct SimulatedDht {
    config: DhtConfig,
    nodes: Vec<Node>,
    origin: NodeId,
    now: Timestamp,
    stats: LookupStats,
}

impl SimulatedDht {
    pub fn new(config: DhtConfig) -> Result<Self, DhtError> {
        if config.node_count == 0 {
            return Err(DhtError::InvalidConfig(
                "node_count must be positive".into(),
            ));
        }
        if config.replication_factor == 0 || config.replication_factor > config.node_count {
            return Err(DhtError::InvalidConfig(
                "replication_factor must be in 1..=node_count".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut ids: Vec<[u8; 32]> = (0..config.node_count)
            .map(|_| {
                let mut id = [0u8; 32];
                rng.fill_bytes(&mut id);
                id
            })
            .collect();
        ids.sort();
        ids.dedup();
        if ids.len() != config.node_count {
            return Err(DhtError::InvalidConfig("node id collision".into()));
        }
        let nodes = ids
            .into_iter()
            .map(|id| Node {
                id,
                alive: true,
                stored: BTreeMap::new(),
                cache: BTreeMap::new(),
            })
            .collect();
        Ok(SimulatedDht {
            config,
            nodes,
            origin: 0,
            now: Timestamp(0),
            stats: LookupStats::default(),
        })
    }

    pub fn config(&self) -> &DhtConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_id(&self, node: NodeId) -> Option<&[u8; 32]> {
        self.nodes.get(node).map(|n| &n.id)
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.nodes.get(node).is_some_and(|n| n.alive)
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn set_now(&mut self, t: Timestamp) {
        if t > self.now {
            self.advance_clock(self.now.until(t));
        }
    }

    pub fn origin(&self) -> NodeId {
        self.origin
    }

    /// Node where lookups made through the [`NameSystemBackend`] interface enter.
    pub fn set_origin(&mut self, node: NodeId) -> Result<(), DhtError> {
        if node >= self.nodes.len() {
            return Err(DhtError::UnknownNode(node));
        }
        self.origin = node;
        Ok(())
    }

    /// The `r` ring successors of `key`.
    pub fn replicas(&self, key: &QueryKey) -> Vec<NodeId> {
        let n = self.nodes.len();
        let start = self.nodes.partition_point(|node| node.id < key.0) % n;
        (0..self.config.replication_factor)
            .map(|i| (start + i) % n)
            .collect()
    }

    fn hops(&self) -> u64 {
        let n = self.nodes.len() as u64;
        if n <= 1 {
            0
        } else {
            64 - (n - 1).leading_zeros() as u64
        }
    }

    fn check_nodes(&self, ids: &[NodeId]) -> Result<(), DhtError> {
        match ids.iter().find(|&&id| id >= self.nodes.len()) {
            Some(&bad) => Err(DhtError::UnknownNode(bad)),
            None => Ok(()),
        }
    }

    /// Failed nodes drop everything they stored or cached.
    pub fn fail_nodes(&mut self, ids: &[NodeId]) -> Result<(), DhtError> {
        self.check_nodes(ids)?;
        for &id in ids {
            let node = &mut self.nodes[id];
            node.alive = false;
            node.stored.clear();
            node.cache.clear();
        }
        Ok(())
    }

    /// Healed nodes come back empty.
    pub fn heal_nodes(&mut self, ids: &[NodeId]) -> Result<(), DhtError> {
        self.check_nodes(ids)?;
        for &id in ids {
            self.nodes[id].alive = true;
        }
        Ok(())
    }

    pub fn failed_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].alive)
            .collect()
    }

    /// Moves simulated time forward, evicting cache entries past their TTL
    /// and stored sets past their expiration.
    pub fn advance_clock(&mut self, delta: Duration) {
        if delta.is_zero() {
            return;
        }
        self.now = self.now.saturating_add(delta);
        let now = self.now;
        for node in &mut self.nodes {
            node.cache.retain(|_, (_, until)| *until > now);
            node.stored
                .retain(|_, set| set.expiration().is_none_or(|t| t > now));
        }
    }

    pub fn clear_caches(&mut self) {
        for node in &mut self.nodes {
            node.cache.clear();
        }
    }

    /// Number of live nodes holding an unexpired cached copy of `key`.
    pub fn cached_copies(&self, key: &QueryKey, clock: Timestamp) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.alive && n.cache.get(key).is_some_and(|(_, until)| *until > clock))
            .count()
    }

    /// Flips a signature byte of every stored replica of `key`, modelling a
    /// malicious or faulty storage node.
    pub fn tamper_stored(&mut self, key: &QueryKey) {
        for node in &mut self.nodes {
            if let Some(set) = node.stored.get_mut(key) {
                let mut sig = *set.signature().as_bytes();
                sig[0] ^= 0x01;
                *set = RecordSet::with_raw_parts(
                    set.owner(),
                    set.label().clone(),
                    set.records().to_vec(),
                    crate::keys::Signature::from_bytes(sig),
                );
            }
        }
    }

    fn entry_node(&self, from: NodeId) -> Option<NodeId> {
        let n = self.nodes.len();
        (0..n)
            .map(|i| (from + i) % n)
            .find(|&i| self.nodes[i].alive)
    }

    pub fn get_from(
        &mut self,
        from: NodeId,
        key: &QueryKey,
        clock: Timestamp,
    ) -> Result<Option<RecordSet>, BackendError> {
        if from >= self.nodes.len() {
            return Err(BackendError::Unavailable(format!("unknown node {from}")));
        }
        self.stats.lookups += 1;
        let entry = self
            .entry_node(from)
            .ok_or_else(|| BackendError::Unavailable("no live nodes".into()))?;

        let cached = self.nodes[entry]
            .cache
            .get(key)
            .filter(|(set, until)| *until > clock && servable(set, clock))
            .map(|(set, _)| set.clone());
        if let Some(set) = cached {
            self.stats.cache_hits += 1;
            return Ok(Some(set));
        }

        let hops = self.hops();
        let latency = self.config.hop_latency_us;
        self.stats.messages += hops;
        self.stats.latency_us += hops * latency;
        self.stats.max_hops = self.stats.max_hops.max(hops);

        let mut any_live = false;
        let mut saw_bad = false;
        let mut found = None;
        for replica in self.replicas(key) {
            self.stats.messages += 1;
            self.stats.latency_us += latency;
            let node = &self.nodes[replica];
            if !node.alive {
                continue;
            }
            any_live = true;
            let Some(set) = node.stored.get(key) else {
                continue;
            };
            if !set.verify_signature(&set.owner()) {
                self.stats.rejected += 1;
                saw_bad = true;
                continue;
            }
            if servable(set, clock) {
                found = Some(set.clone());
                break;
            }
        }

        match found {
            Some(set) => {
                let ttl_end = clock.saturating_add(Duration::from_micros(self.config.cache_ttl_us));
                let until = set.expiration().map_or(ttl_end, |exp| exp.min(ttl_end));
                if until > clock {
                    self.nodes[entry].cache.insert(*key, (set.clone(), until));
                }
                Ok(Some(set))
            }
            None if !any_live => Err(BackendError::AllReplicasDown(*key)),
            None if saw_bad => Err(BackendError::BadSignature),
            None => Ok(None),
        }
    }
}

impl NameSystemBackend for SimulatedDht {
    fn put(&mut self, key: QueryKey, set: RecordSet) -> Result<(), BackendError> {
        validate_put(&key, &set)?;
        self.stats.puts += 1;
        self.stats.messages += self.hops();
        let mut stored = 0;
        for replica in self.replicas(&key) {
            self.stats.messages += 1;
            let node = &mut self.nodes[replica];
            if node.alive {
                node.stored.insert(key, set.clone());
                stored += 1;
            }
        }
        if stored == 0 {
            return Err(BackendError::AllReplicasDown(key));
        }
        Ok(())
    }

    fn get(&mut self, key: &QueryKey, clock: Timestamp) -> Result<Option<RecordSet>, BackendError> {
        self.get_from(self.origin, key, clock)
    }

    fn stats(&self) -> LookupStats {
        self.stats
    }
}
