use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Milliseconds since the deployment epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_duration(d: Duration) -> Self {
        Timestamp(d.as_millis() as u64)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, d: Duration) -> Timestamp {
        Timestamp(self.0.saturating_sub(d.as_millis() as u64))
    }

    /// Time elapsed from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }
}

impl std::ops::Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0 + d.as_millis() as u64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Cloud,
    Fog,
    Edge,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Cloud, Domain::Fog, Domain::Edge];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Cloud => "cloud",
            Domain::Fog => "fog",
            Domain::Edge => "edge",
        }
    }

    /// Token that manifests use in place of this domain's ingress address.
    pub fn placeholder(self) -> &'static str {
        match self {
            Domain::Cloud => "{{QONNECT_CLOUD_IP}}",
            Domain::Fog => "{{QONNECT_FOG_IP}}",
            Domain::Edge => "{{QONNECT_EDGE_IP}}",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown domain `{0}`")]
pub struct UnknownDomain(pub String);

impl FromStr for Domain {
    type Err = UnknownDomain;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cloud" => Ok(Domain::Cloud),
            "fog" => Ok(Domain::Fog),
            "edge" => Ok(Domain::Edge),
            other => Err(UnknownDomain(other.to_string())),
        }
    }
}

/// User weights for energy, pricing and performance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosVector {
    pub energy: f64,
    pub pricing: f64,
    pub performance: f64,
}

impl QosVector {
    pub const UNIFORM: QosVector = QosVector { energy: 1.0, pricing: 1.0, performance: 1.0 };

    pub fn new(energy: f64, pricing: f64, performance: f64) -> Self {
        Self { energy, pricing, performance }
    }

    pub fn is_valid(&self) -> bool {
        [self.energy, self.pricing, self.performance].iter().all(|w| w.is_finite() && *w >= 0.0)
    }

    /// The all-zero vector means "no preference" and scores like (1,1,1).
    pub fn normalized(self) -> Self {
        if self.energy == 0.0 && self.pricing == 0.0 && self.performance == 0.0 {
            Self::UNIFORM
        } else {
            self
        }
    }
}

/// What a resource agent reports for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub name: String,
    #[serde(default)]
    pub control_plane: bool,
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

impl NodeReport {
    pub fn is_valid(&self) -> bool {
        !self.name.is_empty()
            && [self.energy, self.pricing, self.cpu, self.memory, self.bandwidth, self.storage]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// A node as the knowledge base stores it and the scorer sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub cluster_id: Uuid,
    pub node_name: String,
    pub ready: bool,
    pub schedulable: bool,
    pub pressured: bool,
    pub energy: f64,
    pub pricing: f64,
    pub cpu: f64,
    pub memory: f64,
    pub bandwidth: f64,
    pub storage: f64,
    pub taken_at: Timestamp,
    #[serde(default)]
    pub flagged_control_plane: bool,
}

impl NodeSnapshot {
    pub fn from_report(cluster_id: Uuid, report: &NodeReport, taken_at: Timestamp) -> Self {
        Self {
            cluster_id,
            node_name: report.name.clone(),
            ready: report.ready,
            schedulable: report.schedulable,
            pressured: report.pressured,
            energy: report.energy,
            pricing: report.pricing,
            cpu: report.cpu,
            memory: report.memory,
            bandwidth: report.bandwidth,
            storage: report.storage,
            taken_at,
            flagged_control_plane: report.control_plane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: Uuid,
    pub domain: Domain,
    pub external_ip: String,
    pub registered_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentStatus {
    Pending,
    Scheduled,
    Healthy,
    Progressing,
    Failed,
    Withdrawn,
}

impl ComponentStatus {
    /// Placed and expected to be heartbeating.
    pub fn is_placed(self) -> bool {
        matches!(self, Self::Scheduled | Self::Healthy | Self::Progressing | Self::Failed)
    }
}

/// Status an agent reports in a heartbeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthStatus {
    Healthy,
    Progressing,
    Failed,
}

impl From<HealthStatus> for ComponentStatus {
    fn from(h: HealthStatus) -> Self {
        match h {
            HealthStatus::Healthy => ComponentStatus::Healthy,
            HealthStatus::Progressing => ComponentStatus::Progressing,
            HealthStatus::Failed => ComponentStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub component_name: String,
    pub cluster_id: Uuid,
    pub node_names: Vec<String>,
    pub decided_at: Timestamp,
    pub deciding_term: u64,
}

/// One deployable part of an application, as submitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub domain: Domain,
    pub objects: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationSpec {
    pub name: String,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    pub qos: QosVector,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub name: String,
    pub domain: Domain,
    pub objects: Vec<serde_json::Value>,
    pub status: ComponentStatus,
    pub decision: Option<ScheduleDecision>,
    pub last_heartbeat: Option<Timestamp>,
}

impl ComponentRecord {
    /// Reference time for staleness: last heartbeat, else the decision time.
    pub fn last_seen(&self) -> Option<Timestamp> {
        self.last_heartbeat.or(self.decision.as_ref().map(|d| d.decided_at))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationRecord {
    pub app_id: Uuid,
    pub name: String,
    pub labels: BTreeMap<String, String>,
    pub qos: QosVector,
    pub components: Vec<ComponentRecord>,
    pub version: u64,
    pub submitted_at: Timestamp,
    /// Order of submission, used to break ties between equal timestamps.
    pub seq: u64,
    pub deleted: bool,
}

impl ApplicationRecord {
    pub fn component(&self, name: &str) -> Option<&ComponentRecord> {
        self.components.iter().find(|c| c.name == name)
    }

    pub(crate) fn component_mut(&mut self, name: &str) -> Option<&mut ComponentRecord> {
        self.components.iter_mut().find(|c| c.name == name)
    }

    pub fn is_live(&self) -> bool {
        !self.deleted
    }
}

/// A component reference `(app, component)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentRef {
    pub app_id: Uuid,
    pub app_name: String,
    pub component: String,
}
