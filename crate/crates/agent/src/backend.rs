use std::collections::{BTreeMap, BTreeSet};

use qonnect_core::{Domain, NodeReport, Timestamp};
use qonnect_sim::{NodeRole, ObjectId, Phase, SharedCluster, SimError};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl From<SimError> for BackendError {
    fn from(e: SimError) -> Self {
        BackendError(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadState {
    pub desired: u32,
    pub ready: u32,
    pub crash_looping: bool,
}

/// The slice of a cluster API the agent needs. Objects are addressed by
/// `Kind/name` keys within a namespace.
pub trait ClusterBackend: Send + Sync {
    fn name(&self) -> String;
    fn domain(&self) -> Domain;
    fn external_ip(&self) -> String;
    /// Whether the cluster also hosts a control-plane replica.
    fn hosts_control_plane(&self) -> bool;
    fn now(&self) -> Timestamp;
    /// False once the agent process has been killed.
    fn agent_alive(&self) -> bool;
    /// Every node, control-plane ones included.
    fn node_reports(&self) -> Vec<NodeReport>;

    fn config_store(&self, store: &str) -> Option<BTreeMap<String, String>>;
    fn ensure_config_store(&self, store: &str);
    fn put_config(&self, store: &str, key: &str, value: &str);
    fn remove_config(&self, store: &str, key: &str);

    fn namespaces(&self) -> BTreeSet<String>;
    fn ensure_namespace(&self, name: &str, labels: &BTreeMap<String, String>);
    fn delete_namespace(&self, name: &str) -> bool;
    fn object_keys(&self, namespace: &str) -> Option<BTreeSet<String>>;
    fn apply(&self, namespace: &str, objects: &[Value], pinned: &[String]) -> Result<Vec<String>, BackendError>;
    fn remove_objects(&self, namespace: &str, keys: &[String]) -> Result<usize, BackendError>;
    fn workload(&self, namespace: &str, name: &str) -> Option<WorkloadState>;
}

fn object_id(key: &str) -> ObjectId {
    let (kind, name) = key.split_once('/').unwrap_or((key, ""));
    ObjectId { kind: kind.to_string(), name: name.to_string() }
}

impl ClusterBackend for SharedCluster {
    fn name(&self) -> String {
        self.lock().name().to_string()
    }

    fn domain(&self) -> Domain {
        self.lock().domain()
    }

    fn external_ip(&self) -> String {
        self.lock().ingress_ip().to_string()
    }

    fn hosts_control_plane(&self) -> bool {
        self.lock().hosts_rla()
    }

    fn now(&self) -> Timestamp {
        self.lock().now()
    }

    fn agent_alive(&self) -> bool {
        self.lock().ra_alive()
    }

    fn node_reports(&self) -> Vec<NodeReport> {
        self.lock()
            .nodes()
            .iter()
            .map(|n| NodeReport {
                name: n.name.clone(),
                control_plane: n.role == NodeRole::ControlPlane,
                ready: n.ready,
                schedulable: n.schedulable,
                pressured: n.pressured,
                energy: n.energy,
                pricing: n.pricing,
                cpu: n.cpu,
                memory: n.memory,
                bandwidth: n.bandwidth,
                storage: n.storage,
            })
            .collect()
    }

    fn config_store(&self, store: &str) -> Option<BTreeMap<String, String>> {
        self.lock().config_store(store).cloned()
    }

    fn ensure_config_store(&self, store: &str) {
        self.lock().ensure_config_store(store);
    }

    fn put_config(&self, store: &str, key: &str, value: &str) {
        self.lock().put_config(store, key, value);
    }

    fn remove_config(&self, store: &str, key: &str) {
        self.lock().remove_config(store, key);
    }

    fn namespaces(&self) -> BTreeSet<String> {
        self.lock().namespace_names()
    }

    fn ensure_namespace(&self, name: &str, labels: &BTreeMap<String, String>) {
        self.lock().ensure_namespace(name, labels);
    }

    fn delete_namespace(&self, name: &str) -> bool {
        self.lock().delete_namespace(name)
    }

    fn object_keys(&self, namespace: &str) -> Option<BTreeSet<String>> {
        self.lock().namespace(namespace).map(|ns| ns.objects.keys().map(ToString::to_string).collect())
    }

    fn apply(&self, namespace: &str, objects: &[Value], pinned: &[String]) -> Result<Vec<String>, BackendError> {
        let ids = self.lock().apply_objects(namespace, objects, pinned)?;
        Ok(ids.iter().map(ToString::to_string).collect())
    }

    fn remove_objects(&self, namespace: &str, keys: &[String]) -> Result<usize, BackendError> {
        let ids: Vec<ObjectId> = keys.iter().map(|k| object_id(k)).collect();
        Ok(self.lock().remove_objects(namespace, &ids)?)
    }

    fn workload(&self, namespace: &str, name: &str) -> Option<WorkloadState> {
        self.lock().workload(namespace, name).map(|w| WorkloadState {
            desired: w.desired,
            ready: w.ready,
            crash_looping: w.phase == Phase::CrashLoop,
        })
    }
}
