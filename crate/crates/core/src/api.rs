//! Request and response bodies of the control-plane API, and the
//! [`ControlPlane`] trait that both the HTTP client and in-process
//! handles implement.

use std::collections::BTreeMap;
use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::model::{ApplicationRecord, Domain, HealthStatus, NodeReport, QosVector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub external_ip: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub cluster_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshotRequest {
    pub nodes: Vec<NodeReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshotAck {
    pub accepted: usize,
    /// Control-plane nodes the agent should not have reported.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    /// YAML document stream: one `application` document, then one per component.
    pub bundle: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppAck {
    pub app_id: Uuid,
    pub name: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    pub cluster_id: Uuid,
    pub version: u64,
    pub status: HealthStatus,
}

/// One component an agent should materialize on its cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledApplicationPayload {
    pub app_id: Uuid,
    pub name: String,
    pub version: u64,
    pub labels: BTreeMap<String, String>,
    pub component_name: String,
    /// Objects with placeholders still in place.
    pub objects: Vec<serde_json::Value>,
    pub node_names: Vec<String>,
    /// `domain -> cluster` for the application's placed components.
    pub placement: BTreeMap<Domain, Uuid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlaStatus {
    pub rla_id: u64,
    pub role: RaftRole,
    pub term: u64,
    pub leader_id: Option<u64>,
    pub leader_address: Option<String>,
    pub commit_index: u64,
    pub last_applied: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ApiError {
    #[error("not the leader (leader: {})", leader_address.as_deref().unwrap_or("unknown"))]
    NotLeader { leader_id: Option<u64>, leader_address: Option<String> },
    #[error("no leader elected")]
    NoLeader,
    #[error("not found: {message}")]
    NotFound { message: String },
    #[error("validation failed: {}", errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Validation { errors: Vec<FieldError> },
    #[error("conflict: {message}")]
    Conflict { message: String },
    #[error("bad request: {message}")]
    BadRequest { message: String },
    #[error("request timed out")]
    Timeout,
    #[error("unavailable: {message}")]
    Unavailable { message: String },
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::NotFound { message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::BadRequest { message: message.into() }
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        ApiError::Unavailable { message: message.into() }
    }

    /// Worth retrying against the same or another control-plane replica.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ApiError::NotLeader { .. } | ApiError::NoLeader | ApiError::Timeout | ApiError::Unavailable { .. }
        )
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ApiError::NotLeader { .. } => 307,
            ApiError::NoLeader | ApiError::Unavailable { .. } => 503,
            ApiError::NotFound { .. } => 404,
            ApiError::Validation { .. } => 422,
            ApiError::Conflict { .. } => 409,
            ApiError::BadRequest { .. } => 400,
            ApiError::Timeout => 504,
        }
    }
}

/// The control-plane operations agents and operators use.
#[async_trait]
pub trait ControlPlane: Send + Sync {
    async fn register(&self, request: RegisterRequest) -> Result<RegisterResponse, ApiError>;
    async fn cluster_config(&self) -> Result<BTreeMap<Uuid, String>, ApiError>;
    async fn put_nodes(&self, cluster_id: Uuid, request: NodeSnapshotRequest) -> Result<NodeSnapshotAck, ApiError>;
    async fn poll_applications(&self, cluster_id: Uuid) -> Result<Vec<ScheduledApplicationPayload>, ApiError>;
    async fn submit(&self, request: SubmitRequest) -> Result<AppAck, ApiError>;
    async fn update_qos(&self, name: &str, qos: QosVector) -> Result<AppAck, ApiError>;
    async fn delete_application(&self, name: &str) -> Result<AppAck, ApiError>;
    async fn heartbeat(&self, app_id: Uuid, component: &str, request: HeartbeatRequest) -> Result<(), ApiError>;
    async fn applications(&self) -> Result<Vec<ApplicationRecord>, ApiError>;
    async fn status(&self) -> Result<RlaStatus, ApiError>;
}
