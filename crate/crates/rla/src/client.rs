use std::collections::BTreeMap;
use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use qonnect_core::api::{
    AppAck, HeartbeatRequest, NodeSnapshotAck, NodeSnapshotRequest, RegisterRequest, RegisterResponse, RlaStatus,
    SubmitRequest,
};
use qonnect_core::{ApiError, ApplicationRecord, ControlPlane, QosVector, ScheduledApplicationPayload};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

use crate::http::base_url;
use crate::replica::RlaHandle;

/// How hard a client tries before surfacing a transient error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 8, backoff: Duration::from_millis(200) }
    }
}

/// HTTP client for a replica set. Follows leader redirects and fails over
/// to the next endpoint when one is unreachable or leaderless.
pub struct RlaClient {
    http: reqwest::Client,
    endpoints: Mutex<Vec<String>>,
    current: AtomicUsize,
    policy: RetryPolicy,
}

impl RlaClient {
    pub fn new(endpoints: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        let endpoints: Vec<String> = endpoints.into_iter().map(|e| base_url(e.as_ref())).collect();
        assert!(!endpoints.is_empty(), "at least one endpoint required");
        let http = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(Duration::from_secs(10))
            .build()
            .expect("http client builds");
        Self { http, endpoints: Mutex::new(endpoints), current: AtomicUsize::new(0), policy: RetryPolicy::default() }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn current_endpoint(&self) -> String {
        let endpoints = self.endpoints.lock();
        endpoints[self.current.load(Ordering::Relaxed) % endpoints.len()].clone()
    }

    fn rotate(&self) {
        self.current.fetch_add(1, Ordering::Relaxed);
    }

    fn follow(&self, address: &str) {
        let url = base_url(address);
        let mut endpoints = self.endpoints.lock();
        let index = match endpoints.iter().position(|e| *e == url) {
            Some(i) => i,
            None => {
                endpoints.push(url);
                endpoints.len() - 1
            }
        };
        self.current.store(index, Ordering::Relaxed);
    }

    async fn call<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ApiError> {
        let mut last = ApiError::NoLeader;
        for attempt in 0..self.policy.attempts {
            let url = format!("{}{path}", self.current_endpoint());
            let mut request = self.http.request(method.clone(), &url);
            if let Some(body) = body {
                request = request.json(body);
            }
            let response = match request.send().await {
                Ok(r) => r,
                Err(e) => {
                    last = ApiError::unavailable(format!("{url}: {e}"));
                    self.rotate();
                    tokio::time::sleep(self.policy.backoff).await;
                    continue;
                }
            };
            let status = response.status();
            let redirect = response.headers().get(reqwest::header::LOCATION).and_then(|v| v.to_str().ok()).map(str::to_string);
            let bytes = response.bytes().await.map_err(|e| ApiError::unavailable(e.to_string()))?;
            if status.is_success() {
                let bytes: &[u8] = if bytes.is_empty() { b"null" } else { &bytes };
                return serde_json::from_slice(bytes).map_err(|e| ApiError::unavailable(format!("bad response body: {e}")));
            }
            let error = serde_json::from_slice::<ApiError>(&bytes)
                .unwrap_or_else(|_| ApiError::unavailable(format!("{status} from {url}")));
            match &error {
                ApiError::NotLeader { leader_address, .. } if status == StatusCode::TEMPORARY_REDIRECT => {
                    match leader_address.clone().or(redirect) {
                        Some(address) => self.follow(&address),
                        None => self.rotate(),
                    }
                    if attempt > 0 {
                        tokio::time::sleep(self.policy.backoff / 4).await;
                    }
                }
                e if e.is_transient() => {
                    self.rotate();
                    tokio::time::sleep(self.policy.backoff).await;
                }
                _ => return Err(error),
            }
            last = error;
        }
        Err(last)
    }
}

#[async_trait]
impl ControlPlane for RlaClient {
    async fn register(&self, request: RegisterRequest) -> Result<RegisterResponse, ApiError> {
        self.call(Method::POST, "/clusters/register", Some(&request)).await
    }

    async fn cluster_config(&self) -> Result<BTreeMap<Uuid, String>, ApiError> {
        self.call::<(), _>(Method::GET, "/clusters/config", None).await
    }

    async fn put_nodes(&self, cluster_id: Uuid, request: NodeSnapshotRequest) -> Result<NodeSnapshotAck, ApiError> {
        self.call(Method::POST, &format!("/clusters/{cluster_id}/nodes"), Some(&request)).await
    }

    async fn poll_applications(&self, cluster_id: Uuid) -> Result<Vec<ScheduledApplicationPayload>, ApiError> {
        self.call::<(), _>(Method::GET, &format!("/clusters/{cluster_id}/applications"), None).await
    }

    async fn submit(&self, request: SubmitRequest) -> Result<AppAck, ApiError> {
        self.call(Method::POST, "/applications", Some(&request)).await
    }

    async fn update_qos(&self, name: &str, qos: QosVector) -> Result<AppAck, ApiError> {
        self.call(Method::PUT, &format!("/applications/{name}/qos"), Some(&qos)).await
    }

    async fn delete_application(&self, name: &str) -> Result<AppAck, ApiError> {
        self.call::<(), _>(Method::DELETE, &format!("/applications/{name}"), None).await
    }

    async fn heartbeat(&self, app_id: Uuid, component: &str, request: HeartbeatRequest) -> Result<(), ApiError> {
        self.call(Method::POST, &format!("/applications/{app_id}/components/{component}/heartbeat"), Some(&request))
            .await
    }

    async fn applications(&self) -> Result<Vec<ApplicationRecord>, ApiError> {
        self.call::<(), _>(Method::GET, "/applications", None).await
    }

    async fn status(&self) -> Result<RlaStatus, ApiError> {
        self.call::<(), _>(Method::GET, "/status", None).await
    }
}

/// In-process client over a replica set, with the same redirect and
/// failover behaviour as [`RlaClient`].
pub struct LocalClient {
    replicas: Vec<RlaHandle>,
    current: AtomicUsize,
    policy: RetryPolicy,
}

impl LocalClient {
    pub fn new(replicas: Vec<RlaHandle>) -> Self {
        assert!(!replicas.is_empty(), "at least one replica required");
        Self { replicas, current: AtomicUsize::new(0), policy: RetryPolicy::default() }
    }

    /// Starts at the replica with id `first` (the bootstrap replica).
    pub fn starting_at(mut self, first: u64) -> Self {
        if let Some(i) = self.replicas.iter().position(|r| r.id() == first) {
            self.current = AtomicUsize::new(i);
        }
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn current(&self) -> &RlaHandle {
        &self.replicas[self.current.load(Ordering::Relaxed) % self.replicas.len()]
    }

    async fn call<T, F, Fut>(&self, op: F) -> Result<T, ApiError>
    where
        F: Fn(RlaHandle) -> Fut,
        Fut: Future<Output = Result<T, ApiError>>,
    {
        let mut last = ApiError::NoLeader;
        for attempt in 0..self.policy.attempts {
            let replica = self.current().clone();
            match op(replica).await {
                Ok(v) => return Ok(v),
                Err(ApiError::NotLeader { leader_id: Some(id), leader_address }) => {
                    match self.replicas.iter().position(|r| r.id() == id) {
                        Some(i) => self.current.store(i, Ordering::Relaxed),
                        None => {
                            self.current.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    if attempt > 0 {
                        tokio::time::sleep(self.policy.backoff / 4).await;
                    }
                    last = ApiError::NotLeader { leader_id: Some(id), leader_address };
                }
                Err(e) if e.is_transient() => {
                    self.current.fetch_add(1, Ordering::Relaxed);
                    tokio::time::sleep(self.policy.backoff).await;
                    last = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

#[async_trait]
impl ControlPlane for LocalClient {
    async fn register(&self, request: RegisterRequest) -> Result<RegisterResponse, ApiError> {
        self.call(|r| {
            let request = request.clone();
            async move { r.register(request).await }
        })
        .await
    }

    async fn cluster_config(&self) -> Result<BTreeMap<Uuid, String>, ApiError> {
        self.call(|r| async move { r.cluster_config().await }).await
    }

    async fn put_nodes(&self, cluster_id: Uuid, request: NodeSnapshotRequest) -> Result<NodeSnapshotAck, ApiError> {
        self.call(|r| {
            let request = request.clone();
            async move { r.put_nodes(cluster_id, request).await }
        })
        .await
    }

    async fn poll_applications(&self, cluster_id: Uuid) -> Result<Vec<ScheduledApplicationPayload>, ApiError> {
        self.call(|r| async move { r.poll_applications(cluster_id).await }).await
    }

    async fn submit(&self, request: SubmitRequest) -> Result<AppAck, ApiError> {
        self.call(|r| {
            let request = request.clone();
            async move { r.submit(request).await }
        })
        .await
    }

    async fn update_qos(&self, name: &str, qos: QosVector) -> Result<AppAck, ApiError> {
        self.call(|r| {
            let name = name.to_string();
            async move { r.update_qos(&name, qos).await }
        })
        .await
    }

    async fn delete_application(&self, name: &str) -> Result<AppAck, ApiError> {
        self.call(|r| {
            let name = name.to_string();
            async move { r.delete_application(&name).await }
        })
        .await
    }

    async fn heartbeat(&self, app_id: Uuid, component: &str, request: HeartbeatRequest) -> Result<(), ApiError> {
        self.call(|r| {
            let component = component.to_string();
            let request = request.clone();
            async move { r.heartbeat(app_id, &component, request).await }
        })
        .await
    }

    async fn applications(&self) -> Result<Vec<ApplicationRecord>, ApiError> {
        self.call(|r| async move { r.applications().await }).await
    }

    async fn status(&self) -> Result<RlaStatus, ApiError> {
        self.call(|r| async move { r.status().await }).await
    }
}
