//! Generated operation sequences against one agent and one simulated
//! cluster, checking the record/namespace bijection, placeholder-free
//! objects and node pinning after every step.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use qonnect_agent::record::CLUSTER_CONFIG_STORE;
use qonnect_agent::render::{contains_placeholder, PLACEHOLDER_PREFIX};
use qonnect_agent::{AgentConfig, ClusterBackend, ResourceAgent};
use qonnect_core::params::Profile;
use qonnect_core::{Domain, ScheduledApplicationPayload};
use qonnect_sim::{shared, SharedCluster, SimCluster, SimClusterConfig};
use serde_json::{json, Value};
use uuid::Uuid;

use super::fake::FakeControlPlane;

#[derive(Debug, Clone)]
pub enum Nodes {
    Both,
    First,
    Bogus,
}

#[derive(Debug, Clone)]
pub enum Op {
    Deploy {
        app: u8,
        generation: u8,
        component: u8,
        version: u64,
        nodes: Nodes,
        /// Domains referenced through placeholders.
        refs: Vec<Domain>,
        /// Whether the edge placement points at a cluster missing from the cache.
        unknown_edge: bool,
    },
    WithdrawComponent { app: u8, generation: u8, component: u8 },
    WithdrawApp { app: u8, generation: u8 },
    Step { millis: u64 },
}

fn domain() -> impl Strategy<Value = Domain> {
    prop_oneof![Just(Domain::Cloud), Just(Domain::Fog), Just(Domain::Edge)]
}

pub fn op() -> impl Strategy<Value = Op> {
    let deploy = (
        0u8..3,
        0u8..2,
        0u8..3,
        1u64..4,
        prop_oneof![4 => Just(Nodes::Both), 2 => Just(Nodes::First), 1 => Just(Nodes::Bogus)],
        proptest::collection::vec(domain(), 0..4),
        proptest::bool::weighted(0.15),
    )
        .prop_map(|(app, generation, component, version, nodes, refs, unknown_edge)| Op::Deploy {
            app,
            generation,
            component,
            version,
            nodes,
            refs,
            unknown_edge,
        });
    prop_oneof![
        6 => deploy,
        2 => (0u8..3, 0u8..2, 0u8..3).prop_map(|(app, generation, component)| Op::WithdrawComponent { app, generation, component }),
        1 => (0u8..3, 0u8..2).prop_map(|(app, generation)| Op::WithdrawApp { app, generation }),
        1 => (1u64..5000).prop_map(|millis| Op::Step { millis }),
    ]
}

pub fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(op(), 1..40)
}

fn cluster_for(domain: Domain) -> Uuid {
    Uuid::from_u128(0xc1_0000 + domain as u128)
}

fn ip_for(domain: Domain) -> String {
    format!("172.20.{}.1", domain as u8 + 1)
}

pub struct Rig {
    pub sim: SharedCluster,
    pub agent: ResourceAgent,
    pub workers: Vec<String>,
}

pub fn rig() -> Rig {
    let sim = shared(SimCluster::new(SimClusterConfig::new(Domain::Fog, Profile::Cost, "172.20.2.1")));
    let workers: Vec<String> = sim.lock().workers().map(|n| n.name.clone()).collect();
    let backend: Arc<dyn ClusterBackend> = Arc::new(sim.clone());
    let agent = ResourceAgent::new(AgentConfig::default(), backend, Arc::new(FakeControlPlane::default()));
    for d in Domain::ALL {
        sim.lock().put_config(CLUSTER_CONFIG_STORE, &cluster_for(d).to_string(), &ip_for(d));
    }
    Rig { sim, agent, workers }
}

pub fn app_id(app: u8, generation: u8) -> Uuid {
    Uuid::from_u128(0xa_0000 + app as u128 * 16 + generation as u128)
}

pub fn payload(op: &Op, workers: &[String]) -> Option<ScheduledApplicationPayload> {
    let Op::Deploy { app, generation, component, version, nodes, refs, unknown_edge } = op else { return None };
    let name = format!("app{app}");
    let comp = format!("c{component}");
    let env: Vec<Value> =
        refs.iter().map(|d| json!({ "name": format!("PEER_{}", d.as_str()), "value": format!("http://{}/{name}", d.placeholder()) })).collect();
    let objects = vec![
        json!({"kind": "Deployment", "metadata": {"name": comp}, "spec": {"replicas": 1, "template": {"spec": {"containers": [{"name": comp, "env": env}]}}}}),
        json!({"kind": "Service", "metadata": {"name": comp}, "spec": {"ports": [{"port": 80}]}}),
        json!({"kind": "Ingress", "metadata": {"name": comp}, "spec": {"rules": [{"http": {"paths": [{"path": format!("/{name}/{comp}")}]}}]}}),
    ];
    let mut placement: BTreeMap<Domain, Uuid> = Domain::ALL.into_iter().map(|d| (d, cluster_for(d))).collect();
    if *unknown_edge {
        placement.insert(Domain::Edge, Uuid::from_u128(0xdead));
    }
    let node_names = match nodes {
        Nodes::Both => workers.to_vec(),
        Nodes::First => workers[..1].to_vec(),
        Nodes::Bogus => vec!["no-such-node".to_string()],
    };
    Some(ScheduledApplicationPayload {
        app_id: app_id(*app, *generation),
        name,
        version: *version,
        labels: BTreeMap::from([("team".to_string(), "props".to_string())]),
        component_name: comp,
        objects,
        node_names,
        placement,
    })
}

pub fn apply(rig: &Rig, op: &Op) {
    match op {
        Op::Deploy { .. } => {
            let p = payload(op, &rig.workers).expect("deploy op");
            rig.agent.reconcile(&p);
        }
        Op::WithdrawComponent { app, generation, component } => {
            rig.agent.cleanup_component(app_id(*app, *generation), &format!("c{component}"));
        }
        Op::WithdrawApp { app, generation } => {
            rig.agent.cleanup_application(app_id(*app, *generation));
        }
        Op::Step { millis } => {
            rig.sim.lock().step(std::time::Duration::from_millis(*millis)).expect("positive step");
        }
    }
}

pub fn check_bijection(rig: &Rig) -> Result<(), String> {
    let records = rig.agent.records();
    let record_namespaces: Vec<&String> = records.values().map(|r| &r.namespace).collect();
    let unique: BTreeSet<String> = record_namespaces.iter().map(|s| s.to_string()).collect();
    if unique.len() != record_namespaces.len() {
        return Err(format!("two records share a namespace: {record_namespaces:?}"));
    }
    let namespaces = rig.sim.lock().namespace_names();
    if unique != namespaces {
        return Err(format!("records {unique:?} vs namespaces {namespaces:?}"));
    }
    for r in records.values() {
        if r.components.is_empty() {
            return Err(format!("record {} has no components", r.app_id));
        }
    }
    Ok(())
}

pub fn check_placeholder_free(rig: &Rig) -> Result<(), String> {
    for (ns, object) in rig.sim.lock().all_objects() {
        if contains_placeholder(&object.body) {
            return Err(format!("{ns}/{} still contains {PLACEHOLDER_PREFIX}", object.id));
        }
    }
    Ok(())
}

pub fn check_pinning(rig: &Rig) -> Result<(), String> {
    let records = rig.agent.records();
    let sim = rig.sim.lock();
    for w in sim.workloads() {
        let record = records.values().find(|r| r.namespace == w.namespace).ok_or("workload outside any record")?;
        let deployment = record
            .components
            .values()
            .find(|d| d.objects.contains(&format!("Deployment/{}", w.name)))
            .ok_or_else(|| format!("workload {}/{} not in record", w.namespace, w.name))?;
        let mut expected = deployment.nodes.clone();
        expected.sort();
        if w.pinned_nodes != expected {
            return Err(format!("{}/{} pinned to {:?}, chosen {:?}", w.namespace, w.name, w.pinned_nodes, expected));
        }
    }
    Ok(())
}

/// Runs `ops` and checks `check` after each one.
pub fn run_checked(ops: &[Op], check: fn(&Rig) -> Result<(), String>) -> Result<(), String> {
    let rig = rig();
    for (i, op) in ops.iter().enumerate() {
        apply(&rig, op);
        check(&rig).map_err(|e| format!("after op {i} {op:?}: {e}"))?;
    }
    Ok(())
}
