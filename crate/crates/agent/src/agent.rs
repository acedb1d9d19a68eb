use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use qonnect_core::api::{HeartbeatRequest, NodeSnapshotAck, NodeSnapshotRequest, RegisterRequest};
use qonnect_core::{ApiError, ControlPlane, Domain, EventLog, HealthStatus, NodeReport, ScheduledApplicationPayload};
use serde_json::{json, Value};
use tokio::time::Instant;
use uuid::Uuid;

use crate::backend::ClusterBackend;
use crate::config::AgentConfig;
use crate::record::{AppRecord, ComponentDeployment, APPLICATIONS_STORE, CLUSTER_CONFIG_STORE, SELF_STORE};
use crate::render::{self, APP_ID_LABEL, MANAGED_LABEL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReconcileOutcome {
    Applied { objects: Vec<String> },
    Unchanged,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileEntry {
    pub app_id: Uuid,
    pub component: String,
    pub version: u64,
    pub outcome: ReconcileOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeartbeatOutcome {
    pub app_id: Uuid,
    pub component: String,
    pub status: HealthStatus,
    pub result: Result<(), ApiError>,
}

/// The per-cluster agent. Holds no state of its own: identity, the address
/// cache and the deployment records all live in the backend's config stores.
pub struct ResourceAgent {
    config: AgentConfig,
    backend: Arc<dyn ClusterBackend>,
    control: Arc<dyn ControlPlane>,
    events: EventLog,
    source: String,
}

impl ResourceAgent {
    pub fn new(config: AgentConfig, backend: Arc<dyn ClusterBackend>, control: Arc<dyn ControlPlane>) -> Self {
        let source = format!("ra/{}", backend.name());
        Self { config, backend, control, events: EventLog::new(), source }
    }

    pub fn with_events(mut self, events: EventLog) -> Self {
        self.events = events;
        self
    }

    pub fn backend(&self) -> &Arc<dyn ClusterBackend> {
        &self.backend
    }

    fn record(&self, kind: &str, detail: Value) {
        self.events.record(self.backend.now(), self.source.clone(), kind, detail);
    }

    fn domain(&self) -> Domain {
        self.config.domain.unwrap_or_else(|| self.backend.domain())
    }

    fn external_ip(&self) -> String {
        self.config.external_ip.clone().unwrap_or_else(|| self.backend.external_ip())
    }

    /// Cluster id persisted by an earlier registration.
    pub fn cluster_id(&self) -> Option<Uuid> {
        self.backend.config_store(SELF_STORE)?.get("cluster_id")?.parse().ok()
    }

    pub fn records(&self) -> BTreeMap<Uuid, AppRecord> {
        let store = self.backend.config_store(APPLICATIONS_STORE).unwrap_or_default();
        store
            .iter()
            .filter_map(|(key, value)| match serde_json::from_str::<AppRecord>(value) {
                Ok(r) => Some((r.app_id, r)),
                Err(e) => {
                    tracing::warn!(key = %key, error = %e, "ignoring unreadable application record");
                    None
                }
            })
            .collect()
    }

    fn save_record(&self, record: &AppRecord) {
        let value = serde_json::to_string(record).expect("records encode");
        self.backend.put_config(APPLICATIONS_STORE, &record.app_id.to_string(), &value);
    }

    fn remove_record(&self, app_id: Uuid) {
        self.backend.remove_config(APPLICATIONS_STORE, &app_id.to_string());
    }

    pub fn cluster_config_cache(&self) -> BTreeMap<Uuid, String> {
        let store = self.backend.config_store(CLUSTER_CONFIG_STORE).unwrap_or_default();
        store.into_iter().filter_map(|(k, v)| Some((k.parse().ok()?, v))).collect()
    }

    /// Loads the persisted identity or registers, retrying until the
    /// control plane answers. `None` if the agent is killed meanwhile.
    pub async fn ensure_registered(&self) -> Option<Uuid> {
        for store in [SELF_STORE, CLUSTER_CONFIG_STORE, APPLICATIONS_STORE] {
            self.backend.ensure_config_store(store);
        }
        if let Some(id) = self.cluster_id() {
            self.record("ra.identity_loaded", json!({ "cluster_id": id }));
            return Some(id);
        }
        let request = RegisterRequest { external_ip: self.external_ip(), domain: self.domain().to_string() };
        let mut delay = self.config.retry_min;
        loop {
            if !self.backend.agent_alive() {
                return None;
            }
            match self.control.register(request.clone()).await {
                Ok(response) => {
                    let id = response.cluster_id;
                    let role = if self.backend.hosts_control_plane() { "control-plane" } else { "member" };
                    self.backend.put_config(SELF_STORE, "cluster_id", &id.to_string());
                    self.backend.put_config(SELF_STORE, "domain", self.domain().as_str());
                    self.backend.put_config(SELF_STORE, "role", role);
                    self.record("ra.registered", json!({ "cluster_id": id }));
                    return Some(id);
                }
                Err(e) => {
                    tracing::debug!(agent = %self.source, error = %e, "registration failed, retrying");
                    tokio::time::sleep(delay).await;
                    delay = (delay * 2).min(self.config.retry_max);
                }
            }
        }
    }

    /// Worker nodes only; control-plane nodes never reach the scheduler.
    pub fn node_snapshot(&self) -> Vec<NodeReport> {
        self.backend.node_reports().into_iter().filter(|n| !n.control_plane).collect()
    }

    pub async fn send_node_snapshot(&self, cluster_id: Uuid) -> Result<NodeSnapshotAck, ApiError> {
        self.control.put_nodes(cluster_id, NodeSnapshotRequest { nodes: self.node_snapshot() }).await
    }

    /// Replaces the address cache with the control plane's view.
    pub async fn refresh_config(&self) -> Result<usize, ApiError> {
        let config = self.control.cluster_config().await?;
        let cached = self.cluster_config_cache();
        for id in cached.keys().filter(|id| !config.contains_key(id)) {
            self.backend.remove_config(CLUSTER_CONFIG_STORE, &id.to_string());
        }
        for (id, ip) in &config {
            if cached.get(id) != Some(ip) {
                self.backend.put_config(CLUSTER_CONFIG_STORE, &id.to_string(), ip);
            }
        }
        Ok(config.len())
    }

    pub async fn poll_and_reconcile(&self, cluster_id: Uuid) -> Result<Vec<ReconcileEntry>, ApiError> {
        let payloads = self.control.poll_applications(cluster_id).await?;
        let mut report = Vec::new();
        for payload in &payloads {
            let mut outcome = self.reconcile(payload);
            if matches!(outcome, ReconcileOutcome::Failed(_))
                && !self.placement_resolvable(payload)
                && self.refresh_config().await.is_ok()
            {
                outcome = self.reconcile(payload);
            }
            report.push(ReconcileEntry {
                app_id: payload.app_id,
                component: payload.component_name.clone(),
                version: payload.version,
                outcome,
            });
        }
        Ok(report)
    }

    fn placement_resolvable(&self, payload: &ScheduledApplicationPayload) -> bool {
        let cache = self.cluster_config_cache();
        payload.placement.values().all(|id| cache.contains_key(id))
    }

    /// Materializes one scheduled component. Keeps the record and the
    /// namespace set in step whether the apply succeeds or not.
    pub fn reconcile(&self, payload: &ScheduledApplicationPayload) -> ReconcileOutcome {
        let namespace = payload.name.clone();
        let records = self.records();
        let evicted: Vec<Uuid> =
            records.values().filter(|r| r.namespace == namespace && r.app_id != payload.app_id).map(|r| r.app_id).collect();
        for app_id in evicted {
            self.cleanup_application(app_id);
        }
        let existing = records.get(&payload.app_id).cloned();
        let previous = existing.as_ref().and_then(|r| r.components.get(&payload.component_name)).cloned();
        if let Some(prev) = &previous {
            let present = self.backend.object_keys(&namespace).unwrap_or_default();
            if prev.version == payload.version
                && prev.nodes == payload.node_names
                && prev.objects.iter().all(|k| present.contains(k))
            {
                return ReconcileOutcome::Unchanged;
            }
        }

        let cache = self.cluster_config_cache();
        let addresses: BTreeMap<Domain, String> =
            payload.placement.iter().filter_map(|(d, id)| cache.get(id).map(|ip| (*d, ip.clone()))).collect();
        let mut rendered = Vec::with_capacity(payload.objects.len());
        let mut keys = Vec::with_capacity(payload.objects.len());
        for object in &payload.objects {
            let result = render::replace_placeholders(object, &addresses)
                .and_then(|o| render::object_key(&o).map(|k| (o, k)));
            match result {
                Ok((o, key)) => {
                    rendered.push(render::decorate(&o, &payload.labels, payload.app_id, &payload.component_name, &payload.node_names));
                    keys.push(key);
                }
                Err(e) => return self.apply_failed(payload, e.to_string()),
            }
        }

        let created = !self.backend.namespaces().contains(&namespace);
        let mut ns_labels = payload.labels.clone();
        ns_labels.insert(MANAGED_LABEL.into(), "true".into());
        ns_labels.insert(APP_ID_LABEL.into(), payload.app_id.to_string());
        self.backend.ensure_namespace(&namespace, &ns_labels);
        if let Err(e) = self.backend.apply(&namespace, &rendered, &payload.node_names) {
            if created && existing.is_none() {
                self.backend.delete_namespace(&namespace);
            }
            return self.apply_failed(payload, e.to_string());
        }
        if let Some(prev) = &previous {
            let keep: BTreeSet<&String> = keys.iter().collect();
            let stale: Vec<String> = prev.objects.iter().filter(|k| !keep.contains(k)).cloned().collect();
            if !stale.is_empty() {
                let _ = self.backend.remove_objects(&namespace, &stale);
            }
        }
        let mut record = existing.unwrap_or_else(|| AppRecord {
            app_id: payload.app_id,
            name: payload.name.clone(),
            namespace: namespace.clone(),
            components: BTreeMap::new(),
        });
        record.components.insert(
            payload.component_name.clone(),
            ComponentDeployment {
                version: payload.version,
                objects: keys.clone(),
                nodes: payload.node_names.clone(),
                deployed_at: self.backend.now(),
            },
        );
        self.save_record(&record);
        self.record(
            "ra.applied",
            json!({ "app": payload.name, "component": payload.component_name, "version": payload.version, "nodes": payload.node_names }),
        );
        ReconcileOutcome::Applied { objects: keys }
    }

    fn apply_failed(&self, payload: &ScheduledApplicationPayload, error: String) -> ReconcileOutcome {
        self.record(
            "ra.apply_failed",
            json!({ "app": payload.name, "component": payload.component_name, "error": error }),
        );
        ReconcileOutcome::Failed(error)
    }

    /// Health of one deployed component as seen on the backend now.
    pub fn component_status(&self, record: &AppRecord, deployment: &ComponentDeployment) -> HealthStatus {
        let Some(present) = self.backend.object_keys(&record.namespace) else { return HealthStatus::Failed };
        if deployment.objects.iter().any(|k| !present.contains(k)) {
            return HealthStatus::Failed;
        }
        let mut rolling = false;
        for name in deployment.objects.iter().filter_map(|k| render::is_workload_key(k)) {
            match self.backend.workload(&record.namespace, name) {
                None => return HealthStatus::Failed,
                Some(w) if w.crash_looping => return HealthStatus::Failed,
                Some(w) if w.ready < w.desired => rolling = true,
                Some(_) => {}
            }
        }
        if !rolling {
            HealthStatus::Healthy
        } else if self.backend.now().since(deployment.deployed_at) <= self.config.rollout_timeout {
            HealthStatus::Progressing
        } else {
            HealthStatus::Failed
        }
    }

    /// Sends one heartbeat per deployed component. A not-found answer means
    /// the component was withdrawn here, so its objects are removed.
    pub async fn report_heartbeats(&self, cluster_id: Uuid) -> Vec<HeartbeatOutcome> {
        let mut out = Vec::new();
        for record in self.records().into_values() {
            for (component, deployment) in &record.components {
                let status = self.component_status(&record, deployment);
                let request = HeartbeatRequest { cluster_id, version: deployment.version, status };
                let result = self.control.heartbeat(record.app_id, component, request).await;
                if let Err(ApiError::NotFound { message }) = &result {
                    self.record("ra.withdrawn", json!({ "app": record.name, "component": component, "reason": message }));
                    self.cleanup_component(record.app_id, component);
                }
                out.push(HeartbeatOutcome { app_id: record.app_id, component: component.clone(), status, result });
            }
        }
        out
    }

    /// Removes one component's objects; the namespace and record go with
    /// the last component. Returns whether anything was removed.
    pub fn cleanup_component(&self, app_id: Uuid, component: &str) -> bool {
        let Some(mut record) = self.records().remove(&app_id) else { return false };
        let Some(deployment) = record.components.remove(component) else { return false };
        if record.components.is_empty() {
            self.backend.delete_namespace(&record.namespace);
            self.remove_record(app_id);
            self.record("ra.namespace_deleted", json!({ "app": record.name, "namespace": record.namespace }));
        } else {
            let shared: BTreeSet<&String> = record.components.values().flat_map(|d| &d.objects).collect();
            let own: Vec<String> = deployment.objects.iter().filter(|k| !shared.contains(k)).cloned().collect();
            let _ = self.backend.remove_objects(&record.namespace, &own);
            self.save_record(&record);
            self.record("ra.component_removed", json!({ "app": record.name, "component": component }));
        }
        true
    }

    /// Deletes the application's namespace and record. Idempotent.
    pub fn cleanup_application(&self, app_id: Uuid) -> bool {
        let Some(record) = self.records().remove(&app_id) else { return false };
        self.backend.delete_namespace(&record.namespace);
        self.remove_record(app_id);
        self.record("ra.namespace_deleted", json!({ "app": record.name, "namespace": record.namespace }));
        true
    }

    /// Runs until the backend reports the agent dead.
    pub async fn run(self) {
        let Some(cluster_id) = self.ensure_registered().await else { return self.stopped() };
        let start = Instant::now();
        let mut due = [start; 4];
        loop {
            let now = Instant::now();
            if now >= due[0] {
                if !self.backend.agent_alive() {
                    return self.stopped();
                }
                if let Err(e) = self.send_node_snapshot(cluster_id).await {
                    tracing::debug!(agent = %self.source, error = %e, "node snapshot failed");
                }
                due[0] = now + self.config.snapshot_period;
            }
            if now >= due[1] {
                if !self.backend.agent_alive() {
                    return self.stopped();
                }
                if let Err(e) = self.refresh_config().await {
                    tracing::debug!(agent = %self.source, error = %e, "config poll failed");
                }
                due[1] = now + self.config.config_period;
            }
            if now >= due[2] {
                if !self.backend.agent_alive() {
                    return self.stopped();
                }
                if let Err(e) = self.poll_and_reconcile(cluster_id).await {
                    tracing::debug!(agent = %self.source, error = %e, "application poll failed");
                }
                due[2] = now + self.config.poll_period;
            }
            if now >= due[3] {
                if !self.backend.agent_alive() {
                    return self.stopped();
                }
                self.report_heartbeats(cluster_id).await;
                due[3] = now + self.config.heartbeat_period;
            }
            let next = *due.iter().min().expect("four timers");
            tokio::time::sleep_until(next).await;
        }
    }

    fn stopped(&self) {
        self.record("ra.stopped", json!({}));
    }
}
