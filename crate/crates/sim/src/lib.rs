//! A fake cluster standing in for Kubernetes: nodes with status flags,
//! namespaces of objects, workloads that roll out over simulated time,
//! named config stores, and fault injection.
//!
//! Time only moves through [`SimCluster::step`], so a run is a pure function
//! of the seed, the fault schedule and the sequence of step sizes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use qonnect_core::params::{self, Profile};
use qonnect_core::{Domain, Event, EventLog, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("namespace `{0}` not found")]
    NamespaceNotFound(String),
    #[error("node `{0}` not found")]
    UnknownNode(String),
    #[error("node `{0}` is not a schedulable worker")]
    NodeNotSchedulable(String),
    #[error("workload `{0}` not found")]
    UnknownWorkload(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("step size must be positive")]
    ZeroStep,
    #[error("cluster `{0}` hosts no control-plane agent")]
    NoRla(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    ControlPlane,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub name: String,
    pub role: NodeRole,
    pub ready: bool,
    pub schedulable: bool,
    pub pressured: bool,
    pub energy: f64,
    pub pricing: f64,
    pub cpu: f64,
    pub memory: f64,
    pub bandwidth: f64,
    pub storage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Rolling,
    Ready,
    CrashLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId {
    pub kind: String,
    pub name: String,
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: ObjectId,
    pub labels: BTreeMap<String, String>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorkload {
    pub namespace: String,
    pub name: String,
    pub desired: u32,
    pub ready: u32,
    pub pinned_nodes: Vec<String>,
    pub phase: Phase,
    pub created_at: Timestamp,
    pub restarts: u32,
    rollout_elapsed: Duration,
    next_restart: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Namespace {
    pub labels: BTreeMap<String, String>,
    pub objects: BTreeMap<ObjectId, SimObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fault", content = "target", rename_all = "snake_case")]
pub enum Fault {
    KillRa,
    KillRla,
    NodeNotReady(String),
    NodePressure(String),
    DeleteNamespace(String),
    /// `namespace/workload`.
    CrashLoop(String),
}

#[derive(Debug, Clone)]
pub struct SimClusterConfig {
    pub name: String,
    pub domain: Domain,
    pub profile: Profile,
    pub ingress_ip: String,
    pub workers: usize,
    pub rollout_latency: Duration,
    pub crash_backoff: Duration,
    pub hosts_rla: bool,
    pub seed: u64,
}

impl SimClusterConfig {
    pub fn new(domain: Domain, profile: Profile, ingress_ip: impl Into<String>) -> Self {
        Self {
            name: format!("{domain}-{profile}"),
            domain,
            profile,
            ingress_ip: ingress_ip.into(),
            workers: 2,
            rollout_latency: Duration::from_secs(2),
            crash_backoff: Duration::from_secs(10),
            hosts_rla: false,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rla(mut self) -> Self {
        self.hosts_rla = true;
        self
    }
}

pub const WORKLOAD_KINDS: [&str; 2] = ["Deployment", "StatefulSet"];

pub struct SimCluster {
    config: SimClusterConfig,
    nodes: Vec<SimNode>,
    namespaces: BTreeMap<String, Namespace>,
    workloads: BTreeMap<(String, String), SimWorkload>,
    config_stores: BTreeMap<String, BTreeMap<String, String>>,
    now: Timestamp,
    ra_alive: bool,
    rla_alive: bool,
    rng: ChaCha8Rng,
    events: Vec<Event>,
    sink: Option<EventLog>,
}

impl SimCluster {
    pub fn new(config: SimClusterConfig) -> Self {
        let p = params::table(config.profile);
        let mut nodes = vec![SimNode {
            name: format!("{}-control-plane", config.name),
            role: NodeRole::ControlPlane,
            ready: true,
            schedulable: false,
            pressured: false,
            energy: p.energy,
            pricing: p.pricing,
            cpu: params::BASELINE_CPU,
            memory: params::BASELINE_MEMORY,
            bandwidth: p.bandwidth,
            storage: params::BASELINE_STORAGE,
        }];
        for i in 1..=config.workers {
            nodes.push(SimNode {
                name: format!("{}-worker-{i}", config.name),
                role: NodeRole::Worker,
                ready: true,
                schedulable: true,
                pressured: false,
                energy: p.energy,
                pricing: p.pricing,
                cpu: p.cpu,
                memory: p.memory,
                bandwidth: p.bandwidth,
                storage: p.storage,
            });
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            rla_alive: config.hosts_rla,
            config,
            nodes,
            namespaces: BTreeMap::new(),
            workloads: BTreeMap::new(),
            config_stores: BTreeMap::new(),
            now: Timestamp::ZERO,
            ra_alive: true,
            events: Vec::new(),
            sink: None,
        }
    }

    /// Mirrors every event into a shared log as well.
    pub fn with_event_sink(mut self, sink: EventLog) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn domain(&self) -> Domain {
        self.config.domain
    }

    pub fn profile(&self) -> Profile {
        self.config.profile
    }

    pub fn ingress_ip(&self) -> &str {
        &self.config.ingress_ip
    }

    pub fn hosts_rla(&self) -> bool {
        self.config.hosts_rla
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn ra_alive(&self) -> bool {
        self.ra_alive
    }

    pub fn rla_alive(&self) -> bool {
        self.rla_alive
    }

    pub fn restart_ra(&mut self) {
        self.ra_alive = true;
        self.emit("ra_restarted", Value::Null);
    }

    pub fn restart_rla(&mut self) -> Result<(), SimError> {
        if !self.config.hosts_rla {
            return Err(SimError::NoRla(self.config.name.clone()));
        }
        self.rla_alive = true;
        self.emit("rla_restarted", Value::Null);
        Ok(())
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn workers(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Worker)
    }

    fn node_mut(&mut self, name: &str) -> Result<&mut SimNode, SimError> {
        self.nodes.iter_mut().find(|n| n.name == name).ok_or_else(|| SimError::UnknownNode(name.to_string()))
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn emit(&mut self, kind: &str, detail: Value) {
        let event = Event { at: self.now, source: format!("sim/{}", self.config.name), kind: kind.into(), detail };
        if let Some(sink) = &self.sink {
            sink.record(event.at, event.source.clone(), event.kind.clone(), event.detail.clone());
        }
        self.events.push(event);
    }

    pub fn namespaces(&self) -> impl Iterator<Item = (&String, &Namespace)> {
        self.namespaces.iter()
    }

    pub fn namespace(&self, name: &str) -> Option<&Namespace> {
        self.namespaces.get(name)
    }

    pub fn ensure_namespace(&mut self, name: &str, labels: &BTreeMap<String, String>) -> bool {
        if let Some(ns) = self.namespaces.get_mut(name) {
            for (k, v) in labels {
                ns.labels.insert(k.clone(), v.clone());
            }
            return false;
        }
        self.namespaces.insert(name.to_string(), Namespace { labels: labels.clone(), objects: BTreeMap::new() });
        self.emit("namespace_created", json!({ "namespace": name }));
        true
    }

    /// Removes the namespace with all its objects and workloads. Returns
    /// whether it existed.
    pub fn delete_namespace(&mut self, name: &str) -> bool {
        let Some(ns) = self.namespaces.remove(name) else { return false };
        self.workloads.retain(|(n, _), _| n != name);
        self.emit("namespace_deleted", json!({ "namespace": name, "objects": ns.objects.len() }));
        true
    }

    /// Creates or updates objects in `namespace`. Workload objects are
    /// pinned to `pinned` nodes, which must be schedulable workers.
    pub fn apply_objects(&mut self, namespace: &str, objects: &[Value], pinned: &[String]) -> Result<Vec<ObjectId>, SimError> {
        if !self.namespaces.contains_key(namespace) {
            return Err(SimError::NamespaceNotFound(namespace.to_string()));
        }
        for name in pinned {
            let node = self.nodes.iter().find(|n| &n.name == name).ok_or_else(|| SimError::UnknownNode(name.clone()))?;
            if node.role != NodeRole::Worker || !node.schedulable {
                return Err(SimError::NodeNotSchedulable(name.clone()));
            }
        }
        let parsed: Vec<SimObject> = objects.iter().map(parse_object).collect::<Result<_, _>>()?;
        let mut pins: Vec<String> = pinned.to_vec();
        pins.sort();
        pins.dedup();

        let mut applied = Vec::new();
        for mut object in parsed {
            let ns = self.namespaces.get_mut(namespace).expect("checked");
            let unchanged = ns.objects.get(&object.id).is_some_and(|old| old.body == object.body);
            if let Some(old) = ns.objects.get(&object.id) {
                let mut merged = old.labels.clone();
                merged.extend(object.labels);
                object.labels = merged;
            }
            let id = object.id.clone();
            ns.objects.insert(id.clone(), object.clone());
            if WORKLOAD_KINDS.contains(&id.kind.as_str()) {
                self.upsert_workload(namespace, &object, &pins, unchanged);
            }
            applied.push(id);
        }
        Ok(applied)
    }

    fn upsert_workload(&mut self, namespace: &str, object: &SimObject, pins: &[String], unchanged: bool) {
        let key = (namespace.to_string(), object.id.name.clone());
        let desired = object.body.pointer("/spec/replicas").and_then(Value::as_u64).unwrap_or(1) as u32;
        if let Some(existing) = self.workloads.get(&key) {
            if unchanged && existing.pinned_nodes == pins && existing.desired == desired {
                return;
            }
        }
        let workload = SimWorkload {
            namespace: namespace.to_string(),
            name: object.id.name.clone(),
            desired,
            ready: 0,
            pinned_nodes: pins.to_vec(),
            phase: if desired == 0 { Phase::Ready } else { Phase::Rolling },
            created_at: self.now,
            restarts: 0,
            rollout_elapsed: Duration::ZERO,
            next_restart: Duration::ZERO,
        };
        self.workloads.insert(key, workload);
        self.emit("rollout_started", json!({ "namespace": namespace, "workload": object.id.name, "nodes": pins }));
    }

    /// Deletes the listed objects (and their workloads) from `namespace`.
    /// Returns how many existed.
    pub fn remove_objects(&mut self, namespace: &str, ids: &[ObjectId]) -> Result<usize, SimError> {
        let ns = self.namespaces.get_mut(namespace).ok_or_else(|| SimError::NamespaceNotFound(namespace.to_string()))?;
        let mut removed = Vec::new();
        for id in ids {
            if ns.objects.remove(id).is_some() {
                removed.push(id.clone());
            }
        }
        for id in &removed {
            if WORKLOAD_KINDS.contains(&id.kind.as_str()) {
                self.workloads.remove(&(namespace.to_string(), id.name.clone()));
            }
        }
        if !removed.is_empty() {
            let names: Vec<String> = removed.iter().map(ToString::to_string).collect();
            self.emit("objects_removed", json!({ "namespace": namespace, "objects": names }));
        }
        Ok(removed.len())
    }

    pub fn workloads(&self) -> impl Iterator<Item = &SimWorkload> {
        self.workloads.values()
    }

    pub fn workload(&self, namespace: &str, name: &str) -> Option<&SimWorkload> {
        self.workloads.get(&(namespace.to_string(), name.to_string()))
    }

    /// Advances time by `dt`: rollouts progress and crash-looping workloads restart.
    pub fn step(&mut self, dt: Duration) -> Result<Vec<Event>, SimError> {
        if dt.is_zero() {
            return Err(SimError::ZeroStep);
        }
        let first_new = self.events.len();
        self.now = self.now + dt;
        let latency = self.config.rollout_latency;
        let backoff = self.config.crash_backoff;
        let keys: Vec<(String, String)> = self.workloads.keys().cloned().collect();
        for key in keys {
            let mut ready_event = None;
            let mut restart_event = None;
            {
                let w = self.workloads.get_mut(&key).expect("listed");
                match w.phase {
                    Phase::Ready => {}
                    Phase::Rolling => {
                        w.rollout_elapsed += dt;
                        if w.rollout_elapsed >= latency {
                            w.ready = w.desired;
                            w.phase = Phase::Ready;
                            ready_event = Some(json!({ "namespace": w.namespace, "workload": w.name }));
                        } else {
                            let frac = w.rollout_elapsed.as_secs_f64() / latency.as_secs_f64();
                            w.ready = ((w.desired as f64 * frac).floor() as u32).min(w.desired.saturating_sub(1));
                        }
                    }
                    Phase::CrashLoop => {
                        w.rollout_elapsed += dt;
                        if w.rollout_elapsed >= w.next_restart {
                            w.restarts += 1;
                            w.ready = if w.ready == 0 { w.desired.saturating_sub(1) } else { 0 };
                            let jitter = self.rng.random_range(0..=backoff.as_millis() as u64 / 2);
                            w.next_restart = w.rollout_elapsed + backoff + Duration::from_millis(jitter);
                            restart_event =
                                Some(json!({ "namespace": w.namespace, "workload": w.name, "restarts": w.restarts }));
                        }
                    }
                }
            }
            if let Some(detail) = ready_event {
                self.emit("workload_ready", detail);
            }
            if let Some(detail) = restart_event {
                self.emit("crash_loop_restart", detail);
            }
        }
        Ok(self.events[first_new..].to_vec())
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), SimError> {
        match &fault {
            Fault::KillRa => self.ra_alive = false,
            Fault::KillRla => {
                if !self.config.hosts_rla {
                    return Err(SimError::NoRla(self.config.name.clone()));
                }
                self.rla_alive = false;
            }
            Fault::NodeNotReady(name) => self.node_mut(name)?.ready = false,
            Fault::NodePressure(name) => self.node_mut(name)?.pressured = true,
            Fault::DeleteNamespace(ns) => {
                if !self.delete_namespace(ns) {
                    return Err(SimError::NamespaceNotFound(ns.clone()));
                }
            }
            Fault::CrashLoop(target) => {
                let (ns, name) = target.split_once('/').ok_or_else(|| SimError::UnknownWorkload(target.clone()))?;
                let w = self
                    .workloads
                    .get_mut(&(ns.to_string(), name.to_string()))
                    .ok_or_else(|| SimError::UnknownWorkload(target.clone()))?;
                w.phase = Phase::CrashLoop;
                w.ready = 0;
                w.rollout_elapsed = Duration::ZERO;
                w.next_restart = Duration::ZERO;
            }
        }
        self.emit("fault_injected", serde_json::to_value(&fault).expect("fault encodes"));
        Ok(())
    }

    pub fn clear_node_faults(&mut self, name: &str) -> Result<(), SimError> {
        let node = self.node_mut(name)?;
        node.ready = true;
        node.pressured = false;
        Ok(())
    }

    pub fn config_store(&self, store: &str) -> Option<&BTreeMap<String, String>> {
        self.config_stores.get(store)
    }

    /// Creates an empty store if missing; returns whether it was created.
    pub fn ensure_config_store(&mut self, store: &str) -> bool {
        if self.config_stores.contains_key(store) {
            return false;
        }
        self.config_stores.insert(store.to_string(), BTreeMap::new());
        true
    }

    pub fn put_config(&mut self, store: &str, key: &str, value: &str) {
        self.config_stores.entry(store.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    pub fn remove_config(&mut self, store: &str, key: &str) -> bool {
        self.config_stores.get_mut(store).is_some_and(|s| s.remove(key).is_some())
    }

    /// Every object in every namespace, for whole-cluster assertions.
    pub fn all_objects(&self) -> Vec<(String, SimObject)> {
        self.namespaces
            .iter()
            .flat_map(|(ns, n)| n.objects.values().map(move |o| (ns.clone(), o.clone())))
            .collect()
    }

    pub fn namespace_names(&self) -> BTreeSet<String> {
        self.namespaces.keys().cloned().collect()
    }
}

fn parse_object(value: &Value) -> Result<SimObject, SimError> {
    let kind = value.get("kind").and_then(Value::as_str).ok_or_else(|| SimError::InvalidObject("missing kind".into()))?;
    let name = value
        .pointer("/metadata/name")
        .and_then(Value::as_str)
        .ok_or_else(|| SimError::InvalidObject(format!("{kind} without metadata.name")))?;
    let labels = value
        .pointer("/metadata/labels")
        .and_then(Value::as_object)
        .map(|m| m.iter().filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string()))).collect())
        .unwrap_or_default();
    Ok(SimObject { id: ObjectId { kind: kind.to_string(), name: name.to_string() }, labels, body: value.clone() })
}

/// A cluster shared between its agent and the harness; the mutex
/// serializes every mutation.
pub type SharedCluster = Arc<Mutex<SimCluster>>;

pub fn shared(cluster: SimCluster) -> SharedCluster {
    Arc::new(Mutex::new(cluster))
}
