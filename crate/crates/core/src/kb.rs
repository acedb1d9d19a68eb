//! The knowledge base: the deterministic state machine replicated by Raft.
//!
//! Every mutation is a [`KbCommand`] applied in log order. Commands that
//! reference unknown ids or stale versions are applied as no-ops and report
//! a [`Rejection`]; they never fail, so replicas cannot diverge.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::api::ScheduledApplicationPayload;
use crate::model::{
    ApplicationRecord, ApplicationSpec, ClusterRecord, ComponentRecord, ComponentRef, ComponentStatus, Domain,
    HealthStatus, NodeReport, NodeSnapshot, QosVector, ScheduleDecision, Timestamp,
};

pub const SCHEMA_VERSION: u32 = 1;

const CLUSTER_NAMESPACE: Uuid = Uuid::from_u128(0x6f8e_2c1a_4d3b_5e7f_9a0b_1c2d_3e4f_5a6b);
const APPLICATION_NAMESPACE: Uuid = Uuid::from_u128(0x1b2c_3d4e_5f60_4718_8293_a4b5_c6d7_e8f9);

/// Stable cluster id for an `(external_ip, domain)` pair.
pub fn cluster_id_for(external_ip: &str, domain: Domain) -> Uuid {
    Uuid::new_v5(&CLUSTER_NAMESPACE, format!("{domain}/{external_ip}").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatRecord {
    pub cluster_id: Uuid,
    pub app_id: Uuid,
    pub component: String,
    pub version: u64,
    pub status: HealthStatus,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum KbCommand {
    RegisterCluster { external_ip: String, domain: Domain, at: Timestamp },
    PutNodeSnapshot { cluster_id: Uuid, nodes: Vec<NodeReport>, at: Timestamp },
    SubmitApplication { spec: ApplicationSpec, at: Timestamp },
    UpdateQos { name: String, qos: QosVector, at: Timestamp },
    DeleteApplication { name: String, at: Timestamp },
    RecordDecision { app_id: Uuid, version: u64, decision: ScheduleDecision },
    /// A batch of heartbeats flushed together.
    RecordHeartbeat { beats: Vec<HeartbeatRecord> },
    RequeueComponent { app_id: Uuid, component: String, at: Timestamp },
}

impl KbCommand {
    pub fn name(&self) -> &'static str {
        match self {
            KbCommand::RegisterCluster { .. } => "register_cluster",
            KbCommand::PutNodeSnapshot { .. } => "put_node_snapshot",
            KbCommand::SubmitApplication { .. } => "submit_application",
            KbCommand::UpdateQos { .. } => "update_qos",
            KbCommand::DeleteApplication { .. } => "delete_application",
            KbCommand::RecordDecision { .. } => "record_decision",
            KbCommand::RecordHeartbeat { .. } => "record_heartbeat",
            KbCommand::RequeueComponent { .. } => "requeue_component",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    UnknownCluster,
    UnknownApplication,
    UnknownComponent,
    DuplicateName,
    StaleDecision,
    DomainMismatch,
    NotAssigned,
    InvalidTransition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self { reason, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    ClusterRegistered { cluster_id: Uuid, existing: bool },
    NodesUpdated { cluster_id: Uuid, accepted: usize, stale: usize, flagged: Vec<String> },
    ApplicationSubmitted { app_id: Uuid, name: String },
    QosUpdated { app_id: Uuid, version: u64 },
    ApplicationDeleted { app_id: Uuid },
    DecisionRecorded { app_id: Uuid, component: String, cluster_id: Uuid },
    HeartbeatsRecorded { applied: usize, rejected: Vec<Rejection> },
    ComponentRequeued { app_id: Uuid, component: String },
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KbError {
    #[error("snapshot schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    clusters: BTreeMap<Uuid, ClusterRecord>,
    nodes: BTreeMap<Uuid, BTreeMap<String, NodeSnapshot>>,
    applications: BTreeMap<Uuid, ApplicationRecord>,
    next_seq: u64,
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    schema_version: u32,
    kb: &'a KnowledgeBase,
}

#[derive(Deserialize)]
struct SnapshotIn {
    schema_version: u32,
    kb: KnowledgeBase,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, command: &KbCommand) -> Effect {
        match command {
            KbCommand::RegisterCluster { external_ip, domain, at } => self.register(external_ip, *domain, *at),
            KbCommand::PutNodeSnapshot { cluster_id, nodes, at } => self.put_nodes(*cluster_id, nodes, *at),
            KbCommand::SubmitApplication { spec, at } => self.submit(spec, *at),
            KbCommand::UpdateQos { name, qos, .. } => self.update_qos(name, *qos),
            KbCommand::DeleteApplication { name, .. } => self.delete(name),
            KbCommand::RecordDecision { app_id, version, decision } => self.record_decision(*app_id, *version, decision),
            KbCommand::RecordHeartbeat { beats } => self.record_heartbeats(beats),
            KbCommand::RequeueComponent { app_id, component, .. } => self.requeue(*app_id, component),
        }
    }

    fn register(&mut self, external_ip: &str, domain: Domain, at: Timestamp) -> Effect {
        let cluster_id = cluster_id_for(external_ip, domain);
        let existing = self.clusters.contains_key(&cluster_id);
        self.clusters.entry(cluster_id).or_insert_with(|| ClusterRecord {
            cluster_id,
            domain,
            external_ip: external_ip.to_string(),
            registered_at: at,
        });
        Effect::ClusterRegistered { cluster_id, existing }
    }

    fn put_nodes(&mut self, cluster_id: Uuid, reports: &[NodeReport], at: Timestamp) -> Effect {
        if !self.clusters.contains_key(&cluster_id) {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownCluster, cluster_id.to_string()));
        }
        let nodes = self.nodes.entry(cluster_id).or_default();
        let mut accepted = 0;
        let mut stale = 0;
        let mut flagged = Vec::new();
        for report in reports {
            if nodes.get(&report.name).is_some_and(|n| n.taken_at > at) {
                stale += 1;
                continue;
            }
            if report.control_plane {
                flagged.push(report.name.clone());
            }
            nodes.insert(report.name.clone(), NodeSnapshot::from_report(cluster_id, report, at));
            accepted += 1;
        }
        // nodes the agent no longer reports are gone, unless a newer report exists
        nodes.retain(|name, n| n.taken_at > at || reports.iter().any(|r| &r.name == name));
        Effect::NodesUpdated { cluster_id, accepted, stale, flagged }
    }

    fn submit(&mut self, spec: &ApplicationSpec, at: Timestamp) -> Effect {
        if self.application_by_name(&spec.name).is_some() {
            return Effect::Rejected(Rejection::new(RejectReason::DuplicateName, spec.name.clone()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let app_id = Uuid::new_v5(&APPLICATION_NAMESPACE, format!("{}#{seq}", spec.name).as_bytes());
        let components = spec
            .components
            .iter()
            .map(|c| ComponentRecord {
                name: c.name.clone(),
                domain: c.domain,
                objects: c.objects.clone(),
                status: ComponentStatus::Pending,
                decision: None,
                last_heartbeat: None,
            })
            .collect();
        self.applications.insert(
            app_id,
            ApplicationRecord {
                app_id,
                name: spec.name.clone(),
                labels: spec.labels.clone(),
                qos: spec.qos,
                components,
                version: 1,
                submitted_at: at,
                seq,
                deleted: false,
            },
        );
        Effect::ApplicationSubmitted { app_id, name: spec.name.clone() }
    }

    fn live_id(&self, name: &str) -> Option<Uuid> {
        self.application_by_name(name).map(|a| a.app_id)
    }

    fn update_qos(&mut self, name: &str, qos: QosVector) -> Effect {
        let Some(app) = self.live_id(name).and_then(|id| self.applications.get_mut(&id)) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownApplication, name));
        };
        app.qos = qos;
        app.version += 1;
        for c in &mut app.components {
            c.status = ComponentStatus::Pending;
            c.decision = None;
            c.last_heartbeat = None;
        }
        Effect::QosUpdated { app_id: app.app_id, version: app.version }
    }

    fn delete(&mut self, name: &str) -> Effect {
        let Some(app) = self.live_id(name).and_then(|id| self.applications.get_mut(&id)) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownApplication, name));
        };
        app.deleted = true;
        for c in &mut app.components {
            c.status = ComponentStatus::Withdrawn;
            c.decision = None;
        }
        Effect::ApplicationDeleted { app_id: app.app_id }
    }

    fn record_decision(&mut self, app_id: Uuid, version: u64, decision: &ScheduleDecision) -> Effect {
        let cluster_domain = self.clusters.get(&decision.cluster_id).map(|c| c.domain);
        let Some(app) = self.applications.get_mut(&app_id).filter(|a| a.is_live()) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownApplication, app_id.to_string()));
        };
        if app.version != version {
            return Effect::Rejected(Rejection::new(
                RejectReason::StaleDecision,
                format!("decision for version {version}, application at {}", app.version),
            ));
        }
        let Some(component) = app.component_mut(&decision.component_name) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownComponent, decision.component_name.clone()));
        };
        let Some(domain) = cluster_domain else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownCluster, decision.cluster_id.to_string()));
        };
        if domain != component.domain {
            return Effect::Rejected(Rejection::new(
                RejectReason::DomainMismatch,
                format!("{} targets {}, cluster is {domain}", component.name, component.domain),
            ));
        }
        if component.status != ComponentStatus::Pending {
            return Effect::Rejected(Rejection::new(
                RejectReason::StaleDecision,
                format!("{} is {:?}", component.name, component.status),
            ));
        }
        component.status = ComponentStatus::Scheduled;
        component.decision = Some(decision.clone());
        component.last_heartbeat = None;
        Effect::DecisionRecorded { app_id, component: component.name.clone(), cluster_id: decision.cluster_id }
    }

    fn record_heartbeats(&mut self, beats: &[HeartbeatRecord]) -> Effect {
        let mut applied = 0;
        let mut rejected = Vec::new();
        for beat in beats {
            match self.check_heartbeat(beat.cluster_id, beat.app_id, &beat.component, beat.version) {
                Ok(()) => {
                    let component = self
                        .applications
                        .get_mut(&beat.app_id)
                        .and_then(|a| a.component_mut(&beat.component))
                        .expect("checked");
                    component.status = beat.status.into();
                    component.last_heartbeat = Some(component.last_heartbeat.map_or(beat.at, |t| t.max(beat.at)));
                    applied += 1;
                }
                Err(r) => rejected.push(r),
            }
        }
        Effect::HeartbeatsRecorded { applied, rejected }
    }

    fn requeue(&mut self, app_id: Uuid, name: &str) -> Effect {
        let Some(app) = self.applications.get_mut(&app_id).filter(|a| a.is_live()) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownApplication, app_id.to_string()));
        };
        let Some(component) = app.component_mut(name) else {
            return Effect::Rejected(Rejection::new(RejectReason::UnknownComponent, name));
        };
        if !component.status.is_placed() {
            return Effect::Rejected(Rejection::new(
                RejectReason::InvalidTransition,
                format!("{name} is {:?}", component.status),
            ));
        }
        component.status = ComponentStatus::Pending;
        component.decision = None;
        component.last_heartbeat = None;
        Effect::ComponentRequeued { app_id, component: name.to_string() }
    }

    /// Whether a heartbeat from `cluster_id` is for a live component currently
    /// assigned there at `version`.
    pub fn check_heartbeat(&self, cluster_id: Uuid, app_id: Uuid, component: &str, version: u64) -> Result<(), Rejection> {
        let app = self
            .applications
            .get(&app_id)
            .filter(|a| a.is_live())
            .ok_or_else(|| Rejection::new(RejectReason::UnknownApplication, app_id.to_string()))?;
        let c = app
            .component(component)
            .ok_or_else(|| Rejection::new(RejectReason::UnknownComponent, component))?;
        let assigned = c.status.is_placed()
            && app.version == version
            && c.decision.as_ref().is_some_and(|d| d.cluster_id == cluster_id);
        if !assigned {
            return Err(Rejection::new(
                RejectReason::NotAssigned,
                format!("{}/{component} v{version} not assigned to {cluster_id}", app.name),
            ));
        }
        Ok(())
    }

    pub fn cluster(&self, id: Uuid) -> Option<&ClusterRecord> {
        self.clusters.get(&id)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterRecord> {
        self.clusters.values()
    }

    /// `cluster_id -> ingress ip` for every registered cluster.
    pub fn cluster_config(&self) -> BTreeMap<Uuid, String> {
        self.clusters.values().map(|c| (c.cluster_id, c.external_ip.clone())).collect()
    }

    pub fn nodes(&self, cluster_id: Uuid) -> Vec<NodeSnapshot> {
        self.nodes.get(&cluster_id).map(|n| n.values().cloned().collect()).unwrap_or_default()
    }

    /// Every node of every cluster in `domain`, ordered by cluster then name.
    pub fn nodes_in_domain(&self, domain: Domain) -> Vec<NodeSnapshot> {
        self.clusters
            .values()
            .filter(|c| c.domain == domain)
            .flat_map(|c| self.nodes.get(&c.cluster_id).into_iter().flat_map(|n| n.values().cloned()))
            .collect()
    }

    pub fn application(&self, app_id: Uuid) -> Option<&ApplicationRecord> {
        self.applications.get(&app_id)
    }

    /// The live application with this name.
    pub fn application_by_name(&self, name: &str) -> Option<&ApplicationRecord> {
        self.applications.values().find(|a| a.is_live() && a.name == name)
    }

    pub fn applications(&self) -> impl Iterator<Item = &ApplicationRecord> {
        self.applications.values()
    }

    /// Pending components ordered by submission, then component name.
    pub fn pending_components(&self) -> Vec<ComponentRef> {
        let mut apps: Vec<&ApplicationRecord> = self.applications.values().filter(|a| a.is_live()).collect();
        apps.sort_by_key(|a| (a.submitted_at, a.seq));
        let mut out = Vec::new();
        for app in apps {
            let mut names: Vec<&str> = app
                .components
                .iter()
                .filter(|c| c.status == ComponentStatus::Pending)
                .map(|c| c.name.as_str())
                .collect();
            names.sort_unstable();
            out.extend(names.into_iter().map(|n| ComponentRef {
                app_id: app.app_id,
                app_name: app.name.clone(),
                component: n.to_string(),
            }));
        }
        out
    }

    /// Placed components whose last sign of life is more than `grace` old.
    pub fn stalled_components(&self, now: Timestamp, grace: Duration) -> Vec<ComponentRef> {
        let mut out = Vec::new();
        for app in self.applications.values().filter(|a| a.is_live()) {
            for c in &app.components {
                let watched = matches!(
                    c.status,
                    ComponentStatus::Scheduled | ComponentStatus::Healthy | ComponentStatus::Progressing
                );
                if watched && c.last_seen().is_some_and(|t| now.since(t) > grace) {
                    out.push(ComponentRef { app_id: app.app_id, app_name: app.name.clone(), component: c.name.clone() });
                }
            }
        }
        out
    }

    /// Components newly scheduled onto `cluster_id` and not yet acknowledged.
    ///
    /// A payload is withheld until every domain its objects reference through
    /// a placeholder has a placed sibling component.
    pub fn scheduled_for(&self, cluster_id: Uuid) -> Vec<ScheduledApplicationPayload> {
        let mut out = Vec::new();
        for app in self.applications.values().filter(|a| a.is_live()) {
            let placement = placement_map(app);
            for c in &app.components {
                let Some(decision) = c.decision.as_ref() else { continue };
                if c.status != ComponentStatus::Scheduled || decision.cluster_id != cluster_id {
                    continue;
                }
                let referenced = referenced_domains(&c.objects);
                if !referenced.iter().all(|d| placement.contains_key(d)) {
                    continue;
                }
                out.push(ScheduledApplicationPayload {
                    app_id: app.app_id,
                    name: app.name.clone(),
                    version: app.version,
                    labels: app.labels.clone(),
                    component_name: c.name.clone(),
                    objects: c.objects.clone(),
                    node_names: decision.node_names.clone(),
                    placement: placement.clone(),
                });
            }
        }
        out
    }

    pub fn snapshot_state(&self) -> Vec<u8> {
        serde_json::to_vec(&SnapshotOut { schema_version: SCHEMA_VERSION, kb: self }).expect("kb encodes")
    }

    pub fn restore(blob: &[u8]) -> Result<Self, KbError> {
        let value: serde_json::Value = serde_json::from_slice(blob).map_err(|e| KbError::Schema(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(KbError::Schema(format!("unsupported schema version {v}"))),
            None => return Err(KbError::Schema("missing schema_version".into())),
        }
        let parsed: SnapshotIn = serde_json::from_value(value).map_err(|e| KbError::Schema(e.to_string()))?;
        debug_assert_eq!(parsed.schema_version, SCHEMA_VERSION);
        Ok(parsed.kb)
    }
}

/// `domain -> cluster` for an application's placed components; the first
/// component by name wins when siblings in one domain sit on different clusters.
pub fn placement_map(app: &ApplicationRecord) -> BTreeMap<Domain, Uuid> {
    let mut placed: Vec<&ComponentRecord> =
        app.components.iter().filter(|c| c.status.is_placed() && c.decision.is_some()).collect();
    placed.sort_by(|a, b| a.name.cmp(&b.name));
    let mut map = BTreeMap::new();
    for c in placed {
        map.entry(c.domain).or_insert(c.decision.as_ref().expect("filtered").cluster_id);
    }
    map
}

/// Domains whose placeholder token appears anywhere in `objects`.
pub fn referenced_domains(objects: &[serde_json::Value]) -> Vec<Domain> {
    let text = serde_json::to_string(objects).expect("json values encode");
    Domain::ALL.into_iter().filter(|d| text.contains(d.placeholder())).collect()
}
