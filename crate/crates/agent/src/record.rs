use std::collections::BTreeMap;

use qonnect_core::Timestamp;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Store holding the agent's identity: `cluster_id`, `domain`, `role`.
pub const SELF_STORE: &str = "qonnect-self";
/// Cached `cluster_id -> ingress ip` map.
pub const CLUSTER_CONFIG_STORE: &str = "qonnect-cluster-config";
/// One [`AppRecord`] per deployed application, keyed by app id.
pub const APPLICATIONS_STORE: &str = "qonnect-applications";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDeployment {
    pub version: u64,
    /// `Kind/name` keys of the objects this component put in the namespace.
    pub objects: Vec<String>,
    pub nodes: Vec<String>,
    pub deployed_at: Timestamp,
}

/// What the agent has deployed for one application. Every record owns
/// exactly one namespace and every managed namespace has one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: Uuid,
    pub name: String,
    pub namespace: String,
    pub components: BTreeMap<String, ComponentDeployment>,
}
