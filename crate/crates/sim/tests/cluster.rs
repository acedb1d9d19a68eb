use std::collections::BTreeMap;
use std::time::Duration;

use proptest::prelude::*;
use qonnect_core::params::Profile;
use qonnect_core::Domain;
use qonnect_sim::{Fault, Phase, SimCluster, SimClusterConfig, SimError};
use serde_json::{json, Value};

fn cluster(seed: u64) -> SimCluster {
    SimCluster::new(SimClusterConfig::new(Domain::Fog, Profile::Energy, "172.18.1.10").with_seed(seed))
}

fn deployment(name: &str, replicas: u32, labels: Value) -> Value {
    json!({"kind": "Deployment", "metadata": {"name": name, "labels": labels}, "spec": {"replicas": replicas}})
}

fn workers(c: &SimCluster) -> Vec<String> {
    c.workers().map(|n| n.name.clone()).collect()
}

#[test]
fn workload_becomes_ready_after_rollout_latency() {
    let mut c = cluster(1);
    c.ensure_namespace("shop", &BTreeMap::new());
    let pins = workers(&c);
    c.apply_objects("shop", &[deployment("web", 1, json!({}))], &pins).unwrap();
    assert_eq!(c.workload("shop", "web").unwrap().ready, 0);
    c.step(Duration::from_secs(1)).unwrap();
    assert_eq!(c.workload("shop", "web").unwrap().phase, Phase::Rolling);
    let events = c.step(Duration::from_secs(1)).unwrap();
    assert!(events.iter().any(|e| e.kind == "workload_ready"));
    let w = c.workload("shop", "web").unwrap();
    assert_eq!((w.ready, w.phase), (1, Phase::Ready));
    assert_eq!(w.pinned_nodes, pins);
}

#[test]
fn reapplying_same_objects_does_not_restart_rollout() {
    let mut c = cluster(1);
    c.ensure_namespace("shop", &BTreeMap::new());
    let pins = workers(&c);
    let objs = [deployment("web", 1, json!({}))];
    c.apply_objects("shop", &objs, &pins).unwrap();
    c.step(Duration::from_secs(3)).unwrap();
    let before = c.events().len();
    c.apply_objects("shop", &objs, &pins).unwrap();
    assert_eq!(c.events().len(), before);
    assert_eq!(c.workload("shop", "web").unwrap().phase, Phase::Ready);
}

#[test]
fn labels_merge_with_incoming_winning() {
    let mut c = cluster(1);
    c.ensure_namespace("shop", &BTreeMap::new());
    c.apply_objects("shop", &[deployment("web", 1, json!({"tier": "web", "app": "old"}))], &[]).unwrap();
    c.apply_objects("shop", &[deployment("web", 1, json!({"app": "x"}))], &[]).unwrap();
    let obj = &c.namespace("shop").unwrap().objects.values().next().unwrap().labels;
    assert_eq!(obj.get("app").map(String::as_str), Some("x"));
    assert_eq!(obj.get("tier").map(String::as_str), Some("web"));
}

#[test]
fn pin_to_unknown_node_rejected() {
    let mut c = cluster(1);
    c.ensure_namespace("shop", &BTreeMap::new());
    let err = c.apply_objects("shop", &[deployment("web", 1, json!({}))], &["ghost".to_string()]).unwrap_err();
    assert_eq!(err, SimError::UnknownNode("ghost".into()));
    let cp = c.nodes()[0].name.clone();
    let err = c.apply_objects("shop", &[deployment("web", 1, json!({}))], &[cp]).unwrap_err();
    assert!(matches!(err, SimError::NodeNotSchedulable(_)));
    assert!(matches!(
        c.apply_objects("missing", &[deployment("web", 1, json!({}))], &[]),
        Err(SimError::NamespaceNotFound(_))
    ));
}

#[test]
fn crash_loop_never_becomes_ready() {
    let mut c = cluster(3);
    c.ensure_namespace("shop", &BTreeMap::new());
    c.apply_objects("shop", &[deployment("web", 2, json!({}))], &[]).unwrap();
    c.inject_fault(Fault::CrashLoop("shop/web".into())).unwrap();
    let mut readies = Vec::new();
    for _ in 0..60 {
        c.step(Duration::from_secs(1)).unwrap();
        let w = c.workload("shop", "web").unwrap();
        assert_eq!(w.phase, Phase::CrashLoop);
        assert!(w.ready < w.desired);
        readies.push(w.ready);
    }
    assert!(readies.contains(&0) && readies.contains(&1), "ready oscillates: {readies:?}");
    assert!(c.workload("shop", "web").unwrap().restarts >= 3);
}

#[test]
fn node_pressure_and_kill_flags() {
    let mut c = cluster(1);
    let w = workers(&c)[0].clone();
    c.inject_fault(Fault::NodePressure(w.clone())).unwrap();
    assert!(c.nodes().iter().find(|n| n.name == w).unwrap().pressured);
    c.inject_fault(Fault::KillRa).unwrap();
    assert!(!c.ra_alive());
    assert!(matches!(c.inject_fault(Fault::DeleteNamespace("nope".into())), Err(SimError::NamespaceNotFound(_))));
}

#[test]
fn same_seed_same_event_log() {
    let run = |seed| {
        let mut c = cluster(seed);
        c.ensure_namespace("a", &BTreeMap::new());
        c.apply_objects("a", &[deployment("x", 3, json!({})), deployment("y", 1, json!({}))], &[]).unwrap();
        c.inject_fault(Fault::CrashLoop("a/x".into())).unwrap();
        for i in 1..200u64 {
            c.step(Duration::from_millis(100 + (i % 7) * 50)).unwrap();
        }
        serde_json::to_string(c.events()).unwrap()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Deleting one namespace removes exactly its objects and workloads.
    #[test]
    fn namespace_deletion_is_conservative(
        layout in prop::collection::btree_map("[a-d]", prop::collection::btree_set("[p-t]", 1..4), 1..4),
        victim in "[a-d]",
    ) {
        let mut c = cluster(0);
        for (ns, names) in &layout {
            c.ensure_namespace(ns, &BTreeMap::new());
            let objs: Vec<Value> = names.iter().map(|n| deployment(n, 1, json!({}))).collect();
            c.apply_objects(ns, &objs, &[]).unwrap();
        }
        let before = c.all_objects();
        let existed = c.delete_namespace(&victim);
        prop_assert_eq!(existed, layout.contains_key(&victim));
        let expected: Vec<_> = before.into_iter().filter(|(ns, _)| ns != &victim).collect();
        prop_assert_eq!(c.all_objects(), expected);
        prop_assert!(c.workloads().all(|w| w.namespace != victim));
        prop_assert_eq!(c.workloads().count(), layout.iter().filter(|(ns, _)| **ns != victim).map(|(_, n)| n.len()).sum::<usize>());
    }
}

#[test]
fn removing_objects_drops_their_workloads_only() {
    let mut c = cluster(2);
    c.ensure_namespace("shop", &BTreeMap::new());
    let pins = workers(&c);
    c.apply_objects("shop", &[deployment("web", 1, json!({})), deployment("db", 1, json!({}))], &pins).unwrap();
    let web = qonnect_sim::ObjectId { kind: "Deployment".into(), name: "web".into() };
    let ghost = qonnect_sim::ObjectId { kind: "Service".into(), name: "nope".into() };
    assert_eq!(c.remove_objects("shop", &[web.clone(), ghost]).unwrap(), 1);
    assert!(c.workload("shop", "web").is_none());
    assert!(c.workload("shop", "db").is_some());
    assert!(c.namespace("shop").is_some());
    assert_eq!(c.remove_objects("gone", &[web]), Err(SimError::NamespaceNotFound("gone".into())));
}
