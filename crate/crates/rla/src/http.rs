use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use qonnect_core::api::{HeartbeatRequest, NodeSnapshotRequest, RegisterRequest, SubmitRequest};
use qonnect_core::{ApiError, ControlPlane, QosVector};
use qonnect_raft::{Envelope, MessageKind, NodeId};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use uuid::Uuid;

use crate::replica::RlaHandle;
use crate::transport::Transport;

/// JSON error body with the matching status code. Redirects carry the
/// leader's address in `Location`.
pub struct ErrorResponse(pub ApiError);

impl IntoResponse for ErrorResponse {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let location = match &self.0 {
            ApiError::NotLeader { leader_address: Some(addr), .. } => HeaderValue::from_str(&base_url(addr)).ok(),
            _ => None,
        };
        let mut response = (status, Json(self.0)).into_response();
        if let Some(location) = location {
            response.headers_mut().insert(header::LOCATION, location);
        }
        response
    }
}

impl From<ApiError> for ErrorResponse {
    fn from(e: ApiError) -> Self {
        ErrorResponse(e)
    }
}

type ApiResult<T> = Result<Json<T>, ErrorResponse>;

pub(crate) fn base_url(address: &str) -> String {
    if address.starts_with("http://") || address.starts_with("https://") {
        address.trim_end_matches('/').to_string()
    } else {
        format!("http://{}", address.trim_end_matches('/'))
    }
}

pub fn router(rla: RlaHandle) -> Router {
    Router::new()
        .route("/clusters/register", post(register))
        .route("/clusters/config", get(cluster_config))
        .route("/clusters/{id}/nodes", post(put_nodes))
        .route("/clusters/{id}/applications", get(poll_applications))
        .route("/applications", post(submit).get(applications))
        .route("/applications/{name}/qos", put(update_qos))
        .route("/applications/{name}", delete(delete_application))
        .route("/applications/{id}/components/{name}/heartbeat", post(heartbeat))
        .route("/status", get(status))
        .route("/raft/{kind}", post(raft_message))
        .with_state(rla)
}

/// Serves the API until the listener fails.
pub async fn serve(rla: RlaHandle, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(rla)).await
}

async fn register(State(rla): State<RlaHandle>, Json(req): Json<RegisterRequest>) -> Response {
    match rla.register(req).await {
        Ok(body) => (StatusCode::OK, Json(body)).into_response(),
        Err(e) => ErrorResponse(e).into_response(),
    }
}

async fn cluster_config(State(rla): State<RlaHandle>) -> ApiResult<BTreeMap<Uuid, String>> {
    Ok(Json(rla.cluster_config().await?))
}

async fn put_nodes(
    State(rla): State<RlaHandle>,
    Path(id): Path<Uuid>,
    Json(req): Json<NodeSnapshotRequest>,
) -> ApiResult<qonnect_core::api::NodeSnapshotAck> {
    Ok(Json(rla.put_nodes(id, req).await?))
}

async fn poll_applications(
    State(rla): State<RlaHandle>,
    Path(id): Path<Uuid>,
) -> ApiResult<Vec<qonnect_core::ScheduledApplicationPayload>> {
    Ok(Json(rla.poll_applications(id).await?))
}

async fn submit(State(rla): State<RlaHandle>, Json(req): Json<SubmitRequest>) -> Response {
    match rla.submit(req).await {
        Ok(ack) => (StatusCode::CREATED, Json(ack)).into_response(),
        Err(e) => ErrorResponse(e).into_response(),
    }
}

async fn applications(State(rla): State<RlaHandle>) -> ApiResult<Vec<qonnect_core::ApplicationRecord>> {
    Ok(Json(rla.applications().await?))
}

async fn update_qos(
    State(rla): State<RlaHandle>,
    Path(name): Path<String>,
    Json(qos): Json<QosVector>,
) -> ApiResult<qonnect_core::api::AppAck> {
    Ok(Json(rla.update_qos(&name, qos).await?))
}

async fn delete_application(State(rla): State<RlaHandle>, Path(name): Path<String>) -> ApiResult<qonnect_core::api::AppAck> {
    Ok(Json(rla.delete_application(&name).await?))
}

async fn heartbeat(
    State(rla): State<RlaHandle>,
    Path((id, name)): Path<(Uuid, String)>,
    Json(req): Json<HeartbeatRequest>,
) -> Result<StatusCode, ErrorResponse> {
    rla.heartbeat(id, &name, req).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn status(State(rla): State<RlaHandle>) -> ApiResult<qonnect_core::api::RlaStatus> {
    Ok(Json(rla.status().await?))
}

async fn raft_message(
    State(rla): State<RlaHandle>,
    Path(kind): Path<String>,
    Json(envelope): Json<Envelope>,
) -> Result<StatusCode, ErrorResponse> {
    if MessageKind::from_path_segment(&kind) != Some(envelope.message.kind()) {
        return Err(ApiError::bad_request(format!("path `{kind}` does not match message kind")).into());
    }
    if envelope.to != rla.id() {
        return Err(ApiError::bad_request(format!("message for {} delivered to {}", envelope.to, rla.id())).into());
    }
    rla.deliver(envelope);
    Ok(StatusCode::ACCEPTED)
}

const PEER_QUEUE: usize = 1024;

/// Sends Raft messages as `POST /raft/{kind}`, one worker per peer. A full
/// queue drops the message; Raft retransmits.
pub struct HttpTransport {
    queues: BTreeMap<NodeId, mpsc::Sender<Envelope>>,
}

impl HttpTransport {
    /// Must be called inside a tokio runtime.
    pub fn new(self_id: NodeId, peers: &BTreeMap<NodeId, String>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(2))
            .build()
            .expect("http client builds");
        let client = Arc::new(client);
        let mut queues = BTreeMap::new();
        for (&id, address) in peers.iter().filter(|(id, _)| **id != self_id) {
            let (tx, mut rx) = mpsc::channel::<Envelope>(PEER_QUEUE);
            let client = client.clone();
            let base = base_url(address);
            tokio::spawn(async move {
                while let Some(envelope) = rx.recv().await {
                    let url = format!("{base}/raft/{}", envelope.message.kind().path_segment());
                    if let Err(e) = client.post(&url).json(&envelope).send().await {
                        tracing::trace!(peer = id, error = %e, "raft send failed");
                    }
                }
            });
            queues.insert(id, tx);
        }
        Self { queues }
    }
}

impl Transport for HttpTransport {
    fn send(&self, envelope: Envelope) {
        if let Some(queue) = self.queues.get(&envelope.to) {
            let _ = queue.try_send(envelope);
        }
    }
}
