//! Deterministic multi-node simulation over a seeded, lossy network.
//!
//! Time advances in fixed ticks. Messages get a random delay in
//! `[min_delay, max_delay]`, may be dropped with `drop_rate`, and are
//! discarded at delivery time when the endpoints are partitioned or the
//! target is stopped. Every replica runs a trivial state machine (the list
//! of applied commands) and a [`Checker`] watches election safety and
//! committed-entry agreement as the run proceeds.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::RaftError;
use crate::message::{Entry, Envelope, Snapshot};
use crate::node::{Output, RaftNode, Role};
use crate::storage::MemStorage;
use crate::{LogIndex, NodeId, RaftConfig, Term};

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub drop_rate: f64,
    pub min_delay: Duration,
    pub max_delay: Duration,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { drop_rate: 0.0, min_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub nodes: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    pub tick: Duration,
    pub snapshot_threshold: u64,
}

impl SimConfig {
    pub fn new(nodes: usize, seed: u64) -> Self {
        Self {
            nodes,
            seed,
            network: NetworkConfig::default(),
            tick: Duration::from_millis(10),
            snapshot_threshold: u64::MAX,
        }
    }

    pub fn with_network(mut self, network: NetworkConfig) -> Self {
        self.network = network;
        self
    }

    pub fn with_snapshot_threshold(mut self, threshold: u64) -> Self {
        self.snapshot_threshold = threshold;
        self
    }
}

/// Replica-side state machine: the ordered list of applied commands.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedLog {
    pub last_index: LogIndex,
    pub commands: Vec<(LogIndex, Vec<u8>)>,
}

impl AppliedLog {
    fn apply(&mut self, entry: &Entry) {
        self.last_index = entry.index;
        if !entry.is_noop() {
            self.commands.push((entry.index, entry.data.clone()));
        }
    }

    pub fn data(&self) -> Vec<Vec<u8>> {
        self.commands.iter().map(|(_, d)| d.clone()).collect()
    }
}

/// Records safety violations observed during a run.
#[derive(Debug, Default)]
pub struct Checker {
    leaders: BTreeMap<Term, NodeId>,
    committed: BTreeMap<LogIndex, (Term, Vec<u8>)>,
    violations: Vec<String>,
}

impl Checker {
    fn observe_leader(&mut self, term: Term, id: NodeId) {
        match self.leaders.get(&term) {
            Some(&existing) if existing != id => self
                .violations
                .push(format!("election safety: term {term} has leaders {existing} and {id}")),
            Some(_) => {}
            None => {
                self.leaders.insert(term, id);
            }
        }
    }

    fn observe_applied(&mut self, node: NodeId, entry: &Entry) {
        match self.committed.get(&entry.index) {
            Some((term, data)) if *term != entry.term || *data != entry.data => self.violations.push(format!(
                "state machine safety: node {node} applied ({}, term {}) but index was committed at term {term}",
                entry.index, entry.term
            )),
            Some(_) => {}
            None => {
                self.committed.insert(entry.index, (entry.term, entry.data.clone()));
            }
        }
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn leaders_by_term(&self) -> &BTreeMap<Term, NodeId> {
        &self.leaders
    }

    /// Every entry any replica has applied, by index.
    pub fn committed(&self) -> &BTreeMap<LogIndex, (Term, Vec<u8>)> {
        &self.committed
    }
}

struct Replica {
    config: RaftConfig,
    storage: MemStorage,
    node: Option<RaftNode<MemStorage>>,
    applied: AppliedLog,
}

pub struct Simulation {
    config: SimConfig,
    rng: ChaCha8Rng,
    now: Duration,
    seq: u64,
    replicas: BTreeMap<NodeId, Replica>,
    in_flight: BTreeMap<(Duration, u64), Envelope>,
    groups: Option<Vec<BTreeSet<NodeId>>>,
    checker: Checker,
    delivered: u64,
    dropped: u64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, RaftError> {
        let members: Vec<NodeId> = (1..=config.nodes as NodeId).collect();
        let mut replicas = BTreeMap::new();
        for &id in &members {
            let raft_config = RaftConfig::new(id, members.clone())
                .with_seed(config.seed.wrapping_mul(31).wrapping_add(id))
                .with_snapshot_threshold(config.snapshot_threshold);
            let storage = MemStorage::new();
            let node = RaftNode::new(raft_config.clone(), storage.clone())?;
            replicas.insert(id, Replica { config: raft_config, storage, node: Some(node), applied: AppliedLog::default() });
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            now: Duration::ZERO,
            seq: 0,
            replicas,
            in_flight: BTreeMap::new(),
            groups: None,
            checker: Checker::default(),
            delivered: 0,
            dropped: 0,
        })
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn members(&self) -> Vec<NodeId> {
        self.replicas.keys().copied().collect()
    }

    pub fn checker(&self) -> &Checker {
        &self.checker
    }

    pub fn message_stats(&self) -> (u64, u64) {
        (self.delivered, self.dropped)
    }

    pub fn set_drop_rate(&mut self, rate: f64) {
        self.config.network.drop_rate = rate;
    }

    pub fn node(&self, id: NodeId) -> Option<&RaftNode<MemStorage>> {
        self.replicas.get(&id).and_then(|r| r.node.as_ref())
    }

    pub fn is_running(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn running(&self) -> Vec<NodeId> {
        self.replicas.iter().filter(|(_, r)| r.node.is_some()).map(|(&id, _)| id).collect()
    }

    pub fn applied(&self, id: NodeId) -> &AppliedLog {
        &self.replicas[&id].applied
    }

    /// The running leader with the highest term, if any.
    pub fn leader(&self) -> Option<NodeId> {
        self.replicas
            .values()
            .filter_map(|r| r.node.as_ref())
            .filter(|n| n.role() == Role::Leader)
            .max_by_key(|n| n.term())
            .map(|n| n.id())
    }

    /// Splits the cluster; nodes only talk within their group.
    pub fn partition(&mut self, groups: Vec<Vec<NodeId>>) {
        self.groups = Some(groups.into_iter().map(|g| g.into_iter().collect()).collect());
    }

    pub fn heal(&mut self) {
        self.groups = None;
    }

    fn connected(&self, a: NodeId, b: NodeId) -> bool {
        match &self.groups {
            None => true,
            Some(groups) => groups.iter().any(|g| g.contains(&a) && g.contains(&b)),
        }
    }

    /// Crash-stops a node: volatile state and in-memory applied state are lost.
    pub fn stop(&mut self, id: NodeId) {
        if let Some(replica) = self.replicas.get_mut(&id) {
            replica.node = None;
            replica.applied = AppliedLog::default();
        }
    }

    /// Rebuilds a stopped node from its surviving storage.
    pub fn restart(&mut self, id: NodeId) -> Result<(), RaftError> {
        let replica = self.replicas.get_mut(&id).expect("known node");
        if replica.node.is_some() {
            return Ok(());
        }
        let node = RaftNode::new(replica.config.clone(), replica.storage.clone())?;
        replica.applied = match node.snapshot() {
            Some(snapshot) => decode_snapshot(snapshot),
            None => AppliedLog::default(),
        };
        replica.node = Some(node);
        Ok(())
    }

    pub fn propose(&mut self, data: Vec<u8>) -> Option<LogIndex> {
        let leader = self.leader()?;
        self.propose_to(leader, data).ok()
    }

    pub fn propose_to(&mut self, id: NodeId, data: Vec<u8>) -> Result<LogIndex, RaftError> {
        let node = self
            .replicas
            .get_mut(&id)
            .and_then(|r| r.node.as_mut())
            .ok_or(RaftError::NotLeader { leader_hint: None })?;
        let proposal = node.propose(data)?;
        self.handle_output(id, proposal.output);
        Ok(proposal.index)
    }

    /// Snapshots `id` at its applied index.
    pub fn compact(&mut self, id: NodeId) -> Result<(), RaftError> {
        let replica = self.replicas.get_mut(&id).expect("known node");
        let Some(node) = replica.node.as_mut() else { return Ok(()) };
        let blob = serde_json::to_vec(&replica.applied).expect("applied log encodes");
        node.compact(replica.applied.last_index, blob)?;
        Ok(())
    }

    pub fn run_for(&mut self, duration: Duration) {
        let end = self.now + duration;
        while self.now < end {
            self.step();
        }
    }

    /// Steps until `done` holds or `limit` elapses; returns whether it held.
    pub fn run_until(&mut self, limit: Duration, mut done: impl FnMut(&Simulation) -> bool) -> bool {
        let end = self.now + limit;
        while self.now < end {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    /// Advances one tick: deliver due messages, then tick every running node.
    pub fn step(&mut self) {
        self.now += self.config.tick;
        while let Some(entry) = self.in_flight.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let env = entry.remove();
            self.deliver(env);
        }
        let tick = self.config.tick;
        for id in self.running() {
            let output = {
                let node = self.replicas.get_mut(&id).and_then(|r| r.node.as_mut()).expect("running");
                node.tick(tick).expect("mem storage is infallible")
            };
            self.handle_output(id, output);
        }
        for id in self.running() {
            if self.node(id).is_some_and(|n| n.should_compact()) {
                self.compact(id).expect("compaction at applied index");
            }
        }
    }

    fn deliver(&mut self, env: Envelope) {
        let to = env.to;
        if !self.connected(env.from, to) || !self.is_running(to) {
            self.dropped += 1;
            return;
        }
        self.delivered += 1;
        let output = {
            let node = self.replicas.get_mut(&to).and_then(|r| r.node.as_mut()).expect("running");
            node.step(env).expect("mem storage is infallible")
        };
        self.handle_output(to, output);
    }

    fn handle_output(&mut self, id: NodeId, output: Output) {
        let replica = self.replicas.get_mut(&id).expect("known node");
        if let Some(snapshot) = &output.restore {
            replica.applied = decode_snapshot(snapshot);
        }
        for entry in &output.committed {
            replica.applied.apply(entry);
            self.checker.observe_applied(id, entry);
        }
        if let Some(node) = replica.node.as_ref() {
            if node.role() == Role::Leader {
                self.checker.observe_leader(node.term(), id);
            }
        }
        for env in output.messages {
            if self.rng.random_bool(self.config.network.drop_rate.clamp(0.0, 1.0)) {
                self.dropped += 1;
                continue;
            }
            let min = self.config.network.min_delay.as_micros() as u64;
            let max = self.config.network.max_delay.as_micros() as u64;
            let delay = Duration::from_micros(self.rng.random_range(min..=max.max(min)));
            self.seq += 1;
            self.in_flight.insert((self.now + delay, self.seq), env);
        }
    }

    /// Checks the log-matching property across every pair of running nodes.
    pub fn log_matching_violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let nodes: Vec<&RaftNode<MemStorage>> = self.replicas.values().filter_map(|r| r.node.as_ref()).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                let lo = a.log().first_index().max(b.log().first_index());
                let hi = a.log().last_index().min(b.log().last_index());
                // find the highest index where both agree on term; everything below must match
                let mut anchor = None;
                for index in (lo..=hi).rev() {
                    let (ea, eb) = (a.log().entry(index), b.log().entry(index));
                    if let (Some(ea), Some(eb)) = (ea, eb) {
                        if ea.term == eb.term {
                            anchor = Some(index);
                            break;
                        }
                    }
                }
                if let Some(anchor) = anchor {
                    for index in lo..=anchor {
                        if a.log().entry(index) != b.log().entry(index) {
                            violations.push(format!(
                                "log matching: nodes {} and {} differ at {index} below agreeing index {anchor}",
                                a.id(),
                                b.id()
                            ));
                            break;
                        }
                    }
                }
                let committed = a.commit_index().min(b.commit_index());
                for index in lo..=committed.min(hi) {
                    if a.log().entry(index) != b.log().entry(index) {
                        violations.push(format!(
                            "committed prefix: nodes {} and {} differ at {index}",
                            a.id(),
                            b.id()
                        ));
                        break;
                    }
                }
            }
        }
        violations
    }
}

/// Outcome of a randomized fault run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChaosReport {
    pub violations: Vec<String>,
    pub proposed: usize,
    pub committed: usize,
    pub terms: usize,
}

/// Runs a seeded schedule of proposals, random partitions, 10% message loss
/// and delay jitter, then heals the network and checks convergence.
///
/// Safety is checked continuously; after healing, every replica must hold
/// every committed entry (durability) and all logs must be identical.
pub fn chaos_run(nodes: usize, seed: u64) -> ChaosReport {
    let network = NetworkConfig { drop_rate: 0.1, min_delay: Duration::from_millis(1), max_delay: Duration::from_millis(40) };
    let config = SimConfig::new(nodes, seed).with_network(network).with_snapshot_threshold(40);
    let mut sim = Simulation::new(config).expect("valid simulation config");
    let mut script = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let members = sim.members();
    let mut violations = Vec::new();
    let mut proposed = 0usize;

    for epoch in 0..16 {
        match script.random_range(0..4) {
            0 => sim.heal(),
            1 => {
                let mut shuffled = members.clone();
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, script.random_range(0..=i));
                }
                let cut = script.random_range(1..shuffled.len());
                let (a, b) = shuffled.split_at(cut);
                sim.partition(vec![a.to_vec(), b.to_vec()]);
            }
            2 => {
                if let Some(leader) = sim.leader() {
                    let rest: Vec<NodeId> = members.iter().copied().filter(|&m| m != leader).collect();
                    sim.partition(vec![vec![leader], rest]);
                }
            }
            _ => {}
        }
        for _ in 0..8 {
            let data = format!("{seed}:{epoch}:{proposed}").into_bytes();
            if sim.propose(data).is_some() {
                proposed += 1;
            }
            sim.run_for(Duration::from_millis(50));
        }
        violations.extend(sim.log_matching_violations());
    }

    sim.heal();
    sim.set_drop_rate(0.0);
    let converged = sim.run_until(Duration::from_secs(10), |s| {
        let Some(leader) = s.leader() else { return false };
        let target = s.node(leader).map_or(0, |n| n.log().last_index());
        s.members().iter().all(|&m| s.node(m).is_some_and(|n| n.last_applied() == target))
    });
    if !converged {
        violations.push(format!("seed {seed}: replicas did not converge after heal"));
    }
    violations.extend(sim.log_matching_violations());
    violations.extend(sim.checker().violations().iter().cloned());

    let committed: Vec<(LogIndex, Vec<u8>)> = sim
        .checker()
        .committed()
        .iter()
        .filter(|(_, (_, data))| !data.is_empty())
        .map(|(&index, (_, data))| (index, data.clone()))
        .collect();
    for &m in &members {
        if sim.applied(m).commands != committed {
            violations.push(format!("durability: node {m} applied history differs from committed entries"));
        }
    }
    ChaosReport { violations, proposed, committed: committed.len(), terms: sim.checker().leaders_by_term().len() }
}

/// Stops `floor(n/2)` replicas including the leader and checks that the
/// survivors still elect a leader and commit new entries, and that stopping
/// one more replica halts commits.
pub fn stop_tolerance(nodes: usize, seed: u64) -> Result<(), String> {
    let mut sim = Simulation::new(SimConfig::new(nodes, seed)).map_err(|e| e.to_string())?;
    if !sim.run_until(Duration::from_secs(5), |s| s.leader().is_some()) {
        return Err("no initial leader".into());
    }
    let leader = sim.leader().expect("checked");
    let mut victims = vec![leader];
    victims.extend(sim.members().into_iter().filter(|&m| m != leader).take(nodes / 2 - 1));
    for &v in &victims {
        sim.stop(v);
    }
    if !sim.run_until(Duration::from_secs(5), |s| s.leader().is_some_and(|l| !victims.contains(&l))) {
        return Err(format!("no leader after stopping {victims:?}"));
    }
    for i in 0..10u8 {
        sim.propose(vec![b's', i]);
    }
    let survivors = sim.running();
    if !sim.run_until(Duration::from_secs(5), |s| survivors.iter().all(|&m| s.applied(m).commands.len() == 10)) {
        return Err("survivors did not commit".into());
    }
    let extra = survivors[0];
    sim.stop(extra);
    sim.run_for(Duration::from_secs(1));
    let before: Vec<usize> = sim.running().iter().map(|&m| sim.applied(m).commands.len()).collect();
    sim.propose(b"blocked".to_vec());
    sim.run_for(Duration::from_secs(3));
    let after: Vec<usize> = sim.running().iter().map(|&m| sim.applied(m).commands.len()).collect();
    if before != after {
        return Err("commit advanced without a quorum".into());
    }
    if !sim.checker().violations().is_empty() {
        return Err(sim.checker().violations().join("; "));
    }
    Ok(())
}

fn decode_snapshot(snapshot: &Snapshot) -> AppliedLog {
    serde_json::from_slice(&snapshot.data).expect("simulation snapshots are applied logs")
}
