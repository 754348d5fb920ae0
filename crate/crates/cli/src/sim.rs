//! `abd sim`: the built-in scenario on a simulated DHT.
//!
//! Each round optionally fails random nodes, advances simulated time and
//! runs discovery for every configured subject, printing one JSON line per
//! lookup and a summary at the end.

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use abd_core::discovery::{discover_traced, Limits};
use abd_core::netsim::{DhtConfig, SimulatedDht};
use abd_core::scenario::Scenario;
use abd_core::{Label, NameSystemBackend, Timestamp};
use anyhow::{bail, Context, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub dht: DhtConfig,
    #[serde(default)]
    pub workload: Workload,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub rounds: usize,
    pub subjects: Vec<String>,
    /// Nodes failed at the start of every round.
    pub fail_per_round: usize,
    /// Heal the failed nodes at the end of each round.
    pub heal: bool,
    pub advance_secs: u64,
    pub seed: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            rounds: 5,
            subjects: vec!["Bob".into(), "Alice".into()],
            fail_per_round: 0,
            heal: true,
            advance_secs: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct LookupLine<'a> {
    round: usize,
    subject: &'a str,
    outcome: &'a str,
    resolves: usize,
    failed_nodes: usize,
    now_us: u64,
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: SimConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

/// Returns true when every lookup produced a decision (no errors).
pub fn run(cfg: &SimConfig, start: Timestamp) -> Result<bool> {
    let mut dht = SimulatedDht::new(cfg.dht.clone())?;
    if cfg.workload.fail_per_round >= dht.node_count() {
        bail!("fail_per_round must be below node_count");
    }
    dht.set_now(start);
    let mut scenario = Scenario::build(start);
    let failed = scenario.publish_all(&mut dht, start);
    if !failed.is_empty() {
        bail!("publishing the scenario failed: {failed:?}");
    }
    for s in &cfg.workload.subjects {
        if scenario.names.get(s).is_none() {
            bail!("unknown scenario subject {s:?}");
        }
    }
    let user = Label::new("user")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.workload.seed);
    let mut all_ok = true;
    let mut out = std::io::stdout().lock();
    for round in 0..cfg.workload.rounds {
        if round > 0 && cfg.workload.advance_secs > 0 {
            dht.advance_clock(Duration::from_secs(cfg.workload.advance_secs));
        }
        let down: Vec<usize> =
            sample(&mut rng, dht.node_count(), cfg.workload.fail_per_round).into_vec();
        dht.fail_nodes(&down)?;
        for subject in &cfg.workload.subjects {
            let now = dht.now();
            let run = discover_traced(
                &scenario.key("S"),
                &user,
                &scenario.key(subject),
                &scenario.creds(subject),
                &mut dht,
                now,
                &Limits::default(),
            );
            let outcome = match &run.result {
                Ok(Some(_)) => "granted",
                Ok(None) => "denied",
                Err(_) => {
                    all_ok = false;
                    "error"
                }
            };
            let line = LookupLine {
                round,
                subject,
                outcome,
                resolves: run.lookups,
                failed_nodes: dht.failed_nodes().len(),
                now_us: dht.now().as_micros(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        if cfg.workload.heal {
            dht.heal_nodes(&down)?;
            // healed nodes come back empty; owners republish
            let now = dht.now();
            scenario.publish_all(&mut dht, now);
        }
    }
    writeln!(out, "{}", serde_json::json!({ "summary": dht.stats() }))?;
    Ok(all_ok)
}
