use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use parking_lot::Mutex;
use qonnect_core::api::{
    AppAck, HeartbeatRequest, NodeSnapshotAck, NodeSnapshotRequest, RaftRole, RegisterRequest, RegisterResponse,
    RlaStatus, SubmitRequest,
};
use qonnect_core::kb::cluster_id_for;
use qonnect_core::{ApiError, ApplicationRecord, ControlPlane, QosVector, ScheduledApplicationPayload};
use uuid::Uuid;

#[derive(Default)]
pub struct FakeState {
    pub down: bool,
    pub registrations: usize,
    pub config: BTreeMap<Uuid, String>,
    pub payloads: Vec<ScheduledApplicationPayload>,
    pub withdrawn: BTreeSet<(Uuid, String)>,
    pub snapshots: Vec<NodeSnapshotRequest>,
    pub heartbeats: Vec<(Uuid, String, HeartbeatRequest)>,
}

/// Scripted control plane for exercising the agent alone.
#[derive(Default)]
pub struct FakeControlPlane {
    pub state: Mutex<FakeState>,
}

impl FakeControlPlane {
    fn up(&self) -> Result<(), ApiError> {
        if self.state.lock().down {
            Err(ApiError::unavailable("fake control plane down"))
        } else {
            Ok(())
        }
    }
}

#[async_trait]
impl ControlPlane for FakeControlPlane {
    async fn register(&self, request: RegisterRequest) -> Result<RegisterResponse, ApiError> {
        self.up()?;
        let domain = request.domain.parse().map_err(|_| ApiError::bad_request("domain"))?;
        let id = cluster_id_for(&request.external_ip, domain);
        let mut s = self.state.lock();
        s.registrations += 1;
        s.config.insert(id, request.external_ip);
        Ok(RegisterResponse { cluster_id: id })
    }

    async fn cluster_config(&self) -> Result<BTreeMap<Uuid, String>, ApiError> {
        self.up()?;
        Ok(self.state.lock().config.clone())
    }

    async fn put_nodes(&self, _cluster_id: Uuid, request: NodeSnapshotRequest) -> Result<NodeSnapshotAck, ApiError> {
        self.up()?;
        let accepted = request.nodes.len();
        self.state.lock().snapshots.push(request);
        Ok(NodeSnapshotAck { accepted, flagged: vec![] })
    }

    async fn poll_applications(&self, cluster_id: Uuid) -> Result<Vec<ScheduledApplicationPayload>, ApiError> {
        self.up()?;
        let _ = cluster_id;
        Ok(self.state.lock().payloads.clone())
    }

    async fn submit(&self, _request: SubmitRequest) -> Result<AppAck, ApiError> {
        Err(ApiError::bad_request("not supported"))
    }

    async fn update_qos(&self, _name: &str, _qos: QosVector) -> Result<AppAck, ApiError> {
        Err(ApiError::bad_request("not supported"))
    }

    async fn delete_application(&self, _name: &str) -> Result<AppAck, ApiError> {
        Err(ApiError::bad_request("not supported"))
    }

    async fn heartbeat(&self, app_id: Uuid, component: &str, request: HeartbeatRequest) -> Result<(), ApiError> {
        self.up()?;
        let mut s = self.state.lock();
        s.heartbeats.push((app_id, component.to_string(), request));
        if s.withdrawn.contains(&(app_id, component.to_string())) {
            return Err(ApiError::not_found(format!("{app_id}/{component}")));
        }
        Ok(())
    }

    async fn applications(&self) -> Result<Vec<ApplicationRecord>, ApiError> {
        Ok(vec![])
    }

    async fn status(&self) -> Result<RlaStatus, ApiError> {
        Ok(RlaStatus {
            rla_id: 1,
            role: RaftRole::Leader,
            term: 1,
            leader_id: Some(1),
            leader_address: None,
            commit_index: 0,
            last_applied: 0,
        })
    }
}
