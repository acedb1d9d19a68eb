use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::{Mutex, RwLock};
use qonnect_core::api::{
    AppAck, FieldError, HeartbeatRequest, NodeSnapshotAck, NodeSnapshotRequest, RaftRole, RegisterRequest,
    RegisterResponse, RlaStatus, SubmitRequest,
};
use qonnect_core::kb::{HeartbeatRecord, RejectReason, Rejection};
use qonnect_core::scheduler::scheduler_tick;
use qonnect_core::{
    manifest, ApiError, ApplicationRecord, BordaScorer, ControlPlane, Domain, Effect, EventLog, KbCommand,
    KnowledgeBase, QosVector, ScheduledApplicationPayload, Scorer, Timestamp,
};
use qonnect_raft::{
    Envelope, FileStorage, LogIndex, MemStorage, NodeId, Output, RaftConfig, RaftError, RaftNode, Role, Storage,
    Term,
};
use serde_json::json;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use uuid::Uuid;

use crate::clock::{Clock, SystemClock};
use crate::config::RlaConfig;
use crate::transport::Transport;

#[derive(Debug, thiserror::Error)]
pub enum RlaError {
    #[error(transparent)]
    Raft(#[from] RaftError),
    #[error(transparent)]
    Kb(#[from] qonnect_core::kb::KbError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("no transport configured")]
    NoTransport,
}

/// Where a replica keeps its Raft state across restarts.
#[derive(Debug, Clone)]
pub enum StorageSpec {
    Memory(MemStorage),
    Dir(PathBuf),
}

impl StorageSpec {
    fn open(&self) -> Result<Box<dyn Storage + Send>, RlaError> {
        Ok(match self {
            StorageSpec::Memory(m) => Box::new(m.clone()),
            StorageSpec::Dir(dir) => Box::new(FileStorage::open(dir).map_err(RaftError::from)?),
        })
    }
}

pub struct RlaBuilder {
    config: RlaConfig,
    clock: Arc<dyn Clock>,
    transport: Option<Arc<dyn Transport>>,
    scorer: Arc<dyn Scorer>,
    events: EventLog,
    storage: Option<StorageSpec>,
}

impl RlaBuilder {
    pub fn clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn transport(mut self, transport: impl Transport + 'static) -> Self {
        self.transport = Some(Arc::new(transport));
        self
    }

    pub fn scorer(mut self, scorer: Arc<dyn Scorer>) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn events(mut self, events: EventLog) -> Self {
        self.events = events;
        self
    }

    pub fn storage(mut self, storage: StorageSpec) -> Self {
        self.storage = Some(storage);
        self
    }

    pub fn build(self) -> Result<RlaHandle, RlaError> {
        self.config.validate()?;
        let transport = self.transport.ok_or(RlaError::NoTransport)?;
        let storage = self.storage.unwrap_or_else(|| match &self.config.data_dir {
            Some(dir) => StorageSpec::Dir(dir.clone()),
            None => StorageSpec::Memory(MemStorage::new()),
        });
        let status = RlaStatus {
            rla_id: self.config.rla_id,
            role: RaftRole::Follower,
            term: 0,
            leader_id: None,
            leader_address: None,
            commit_index: 0,
            last_applied: 0,
        };
        Ok(RlaHandle {
            inner: Arc::new(Inner {
                source: format!("rla-{}", self.config.rla_id),
                config: self.config,
                clock: self.clock,
                transport,
                scorer: self.scorer,
                events: self.events,
                storage,
                kb: RwLock::new(KnowledgeBase::new()),
                view: RwLock::new(View { status, ready: false }),
                running: Mutex::new(None),
            }),
        })
    }
}

struct View {
    status: RlaStatus,
    ready: bool,
}

struct Running {
    requests: mpsc::UnboundedSender<Request>,
    inbox: mpsc::UnboundedSender<Envelope>,
    task: JoinHandle<()>,
}

struct Inner {
    config: RlaConfig,
    source: String,
    clock: Arc<dyn Clock>,
    transport: Arc<dyn Transport>,
    scorer: Arc<dyn Scorer>,
    events: EventLog,
    storage: StorageSpec,
    kb: RwLock<KnowledgeBase>,
    view: RwLock<View>,
    running: Mutex<Option<Running>>,
}

impl Inner {
    fn record(&self, kind: &str, detail: serde_json::Value) {
        self.events.record(self.clock.now(), self.source.clone(), kind, detail);
    }

    fn not_leader(&self, hint: Option<NodeId>) -> ApiError {
        match hint {
            Some(id) if id != self.config.rla_id => ApiError::NotLeader {
                leader_id: Some(id),
                leader_address: self.config.address_of(id).map(str::to_string),
            },
            _ => ApiError::NoLeader,
        }
    }
}

enum Request {
    Propose { command: KbCommand, reply: oneshot::Sender<Result<Effect, ApiError>> },
    Heartbeat { record: HeartbeatRecord, reply: oneshot::Sender<Result<(), ApiError>> },
}

/// One control-plane replica: a Raft member, its knowledge-base copy, and
/// (while leader) the scheduler loop. Clones share the replica.
#[derive(Clone)]
pub struct RlaHandle {
    inner: Arc<Inner>,
}

impl RlaHandle {
    pub fn builder(config: RlaConfig) -> RlaBuilder {
        RlaBuilder {
            config,
            clock: Arc::new(SystemClock),
            transport: None,
            scorer: Arc::new(BordaScorer),
            events: EventLog::new(),
            storage: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.config.rla_id
    }

    pub fn config(&self) -> &RlaConfig {
        &self.inner.config
    }

    pub fn events(&self) -> &EventLog {
        &self.inner.events
    }

    pub fn now(&self) -> Timestamp {
        self.inner.clock.now()
    }

    pub fn is_running(&self) -> bool {
        self.inner.running.lock().is_some()
    }

    /// Spawns the replica's event loop on the current runtime. Restarting a
    /// killed replica resumes from its storage.
    pub fn start(&self) -> Result<(), RlaError> {
        let mut running = self.inner.running.lock();
        if running.is_some() {
            return Ok(());
        }
        let config = &self.inner.config;
        let raft_config = RaftConfig::new(config.rla_id, config.peers.keys().copied())
            .with_seed(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(config.rla_id))
            .with_snapshot_threshold(config.snapshot_threshold)
            .with_timing(config.election_timeout_min, config.election_timeout_max, config.heartbeat_interval);
        let node = RaftNode::new(raft_config, self.inner.storage.open()?)?;
        let kb = match node.snapshot() {
            Some(s) => KnowledgeBase::restore(&s.data)?,
            None => KnowledgeBase::new(),
        };
        *self.inner.kb.write() = kb;

        let (requests, request_rx) = mpsc::unbounded_channel();
        let (inbox, inbox_rx) = mpsc::unbounded_channel();
        let core = Core {
            inner: self.inner.clone(),
            node,
            waiters: BTreeMap::new(),
            beats: BTreeMap::new(),
            last_role: (Role::Follower, 0, None),
        };
        let task = tokio::spawn(core.run(request_rx, inbox_rx));
        *running = Some(Running { requests, inbox, task });
        self.inner.record("rla.started", json!({}));
        Ok(())
    }

    /// Stops the event loop abruptly, as a crashed process would.
    pub fn kill(&self) {
        if let Some(running) = self.inner.running.lock().take() {
            running.task.abort();
            let mut view = self.inner.view.write();
            view.ready = false;
            view.status.role = RaftRole::Follower;
            view.status.leader_id = None;
            view.status.leader_address = None;
            drop(view);
            self.inner.record("rla.killed", json!({}));
        }
    }

    /// Hands an inbound Raft message to the event loop. Dropped if stopped.
    pub fn deliver(&self, envelope: Envelope) {
        if let Some(running) = self.inner.running.lock().as_ref() {
            let _ = running.inbox.send(envelope);
        }
    }

    pub fn status_view(&self) -> RlaStatus {
        self.inner.view.read().status.clone()
    }

    pub fn is_leader(&self) -> bool {
        self.is_running() && self.inner.view.read().status.role == RaftRole::Leader
    }

    /// Runs `f` against this replica's applied knowledge base.
    pub fn with_kb<T>(&self, f: impl FnOnce(&KnowledgeBase) -> T) -> T {
        f(&self.inner.kb.read())
    }

    fn requests(&self) -> Result<mpsc::UnboundedSender<Request>, ApiError> {
        self.inner
            .running
            .lock()
            .as_ref()
            .map(|r| r.requests.clone())
            .ok_or_else(|| ApiError::unavailable(format!("{} is not running", self.inner.source)))
    }

    fn ensure_running(&self) -> Result<(), ApiError> {
        self.requests().map(|_| ())
    }

    async fn propose(&self, command: KbCommand) -> Result<Effect, ApiError> {
        let tx = self.requests()?;
        let (reply, rx) = oneshot::channel();
        tx.send(Request::Propose { command, reply }).map_err(|_| ApiError::unavailable("replica stopped"))?;
        rx.await.unwrap_or_else(|_| Err(ApiError::unavailable("replica stopped")))
    }

    fn version_of(&self, app_id: Uuid) -> u64 {
        self.inner.kb.read().application(app_id).map_or(0, |a| a.version)
    }
}

fn rejection_error(rejection: Rejection) -> ApiError {
    match rejection.reason {
        RejectReason::UnknownCluster
        | RejectReason::UnknownApplication
        | RejectReason::UnknownComponent
        | RejectReason::NotAssigned => ApiError::NotFound { message: rejection.detail },
        RejectReason::DuplicateName
        | RejectReason::StaleDecision
        | RejectReason::DomainMismatch
        | RejectReason::InvalidTransition => ApiError::Conflict { message: rejection.detail },
    }
}

fn unexpected(effect: Effect) -> ApiError {
    match effect {
        Effect::Rejected(r) => rejection_error(r),
        other => ApiError::unavailable(format!("unexpected effect {other:?}")),
    }
}

fn validation(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::Validation { errors: vec![FieldError::new(field, message)] }
}

#[async_trait]
impl ControlPlane for RlaHandle {
    async fn register(&self, request: RegisterRequest) -> Result<RegisterResponse, ApiError> {
        let ip: IpAddr = request.external_ip.parse().map_err(|_| validation("external_ip", "not an IP address"))?;
        let domain: Domain = request.domain.parse().map_err(|e: qonnect_core::UnknownDomain| validation("domain", e.to_string()))?;
        let at = self.inner.clock.now();
        match self.propose(KbCommand::RegisterCluster { external_ip: ip.to_string(), domain, at }).await? {
            Effect::ClusterRegistered { cluster_id, .. } => Ok(RegisterResponse { cluster_id }),
            other => Err(unexpected(other)),
        }
    }

    async fn cluster_config(&self) -> Result<BTreeMap<Uuid, String>, ApiError> {
        self.ensure_running()?;
        Ok(self.inner.kb.read().cluster_config())
    }

    async fn put_nodes(&self, cluster_id: Uuid, request: NodeSnapshotRequest) -> Result<NodeSnapshotAck, ApiError> {
        let errors: Vec<FieldError> = request
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_valid())
            .map(|(i, n)| FieldError::new(format!("nodes[{i}]"), format!("invalid attributes for `{}`", n.name)))
            .collect();
        if !errors.is_empty() {
            return Err(ApiError::Validation { errors });
        }
        let at = self.inner.clock.now();
        match self.propose(KbCommand::PutNodeSnapshot { cluster_id, nodes: request.nodes, at }).await? {
            Effect::NodesUpdated { accepted, flagged, .. } => Ok(NodeSnapshotAck { accepted, flagged }),
            other => Err(unexpected(other)),
        }
    }

    async fn poll_applications(&self, cluster_id: Uuid) -> Result<Vec<ScheduledApplicationPayload>, ApiError> {
        self.ensure_running()?;
        let kb = self.inner.kb.read();
        if kb.cluster(cluster_id).is_none() {
            return Err(ApiError::not_found(format!("cluster {cluster_id}")));
        }
        Ok(kb.scheduled_for(cluster_id))
    }

    async fn submit(&self, request: SubmitRequest) -> Result<AppAck, ApiError> {
        let spec = manifest::parse_bundle(&request.bundle).map_err(|errors| ApiError::Validation { errors })?;
        let at = self.inner.clock.now();
        match self.propose(KbCommand::SubmitApplication { spec, at }).await? {
            Effect::ApplicationSubmitted { app_id, name } => Ok(AppAck { app_id, name, version: self.version_of(app_id) }),
            other => Err(unexpected(other)),
        }
    }

    async fn update_qos(&self, name: &str, qos: QosVector) -> Result<AppAck, ApiError> {
        if !qos.is_valid() {
            return Err(validation("qos", "weights must be finite and non-negative"));
        }
        let at = self.inner.clock.now();
        match self.propose(KbCommand::UpdateQos { name: name.to_string(), qos, at }).await? {
            Effect::QosUpdated { app_id, version } => Ok(AppAck { app_id, name: name.to_string(), version }),
            other => Err(unexpected(other)),
        }
    }

    async fn delete_application(&self, name: &str) -> Result<AppAck, ApiError> {
        let at = self.inner.clock.now();
        match self.propose(KbCommand::DeleteApplication { name: name.to_string(), at }).await? {
            Effect::ApplicationDeleted { app_id } => {
                Ok(AppAck { app_id, name: name.to_string(), version: self.version_of(app_id) })
            }
            other => Err(unexpected(other)),
        }
    }

    async fn heartbeat(&self, app_id: Uuid, component: &str, request: HeartbeatRequest) -> Result<(), ApiError> {
        let tx = self.requests()?;
        let record = HeartbeatRecord {
            cluster_id: request.cluster_id,
            app_id,
            component: component.to_string(),
            version: request.version,
            status: request.status,
            at: self.inner.clock.now(),
        };
        let (reply, rx) = oneshot::channel();
        tx.send(Request::Heartbeat { record, reply }).map_err(|_| ApiError::unavailable("replica stopped"))?;
        rx.await.unwrap_or_else(|_| Err(ApiError::unavailable("replica stopped")))
    }

    async fn applications(&self) -> Result<Vec<ApplicationRecord>, ApiError> {
        self.ensure_running()?;
        Ok(self.inner.kb.read().applications().cloned().collect())
    }

    async fn status(&self) -> Result<RlaStatus, ApiError> {
        self.ensure_running()?;
        Ok(self.status_view())
    }
}

struct Waiter {
    term: Term,
    deadline: Instant,
    reply: oneshot::Sender<Result<Effect, ApiError>>,
}

type BeatKey = (Uuid, Uuid, String);

/// State owned by the replica's event loop.
struct Core {
    inner: Arc<Inner>,
    node: RaftNode<Box<dyn Storage + Send>>,
    waiters: BTreeMap<LogIndex, Waiter>,
    beats: BTreeMap<BeatKey, HeartbeatRecord>,
    last_role: (Role, Term, Option<NodeId>),
}

impl Core {
    async fn run(mut self, mut requests: mpsc::UnboundedReceiver<Request>, mut inbox: mpsc::UnboundedReceiver<Envelope>) {
        let config = self.inner.config.clone();
        let mut raft_tick = tokio::time::interval(config.raft_tick);
        let mut flush = tokio::time::interval(config.heartbeat_flush);
        let mut schedule = tokio::time::interval(config.scheduler.tick);
        for timer in [&mut raft_tick, &mut flush, &mut schedule] {
            timer.set_missed_tick_behavior(MissedTickBehavior::Delay);
        }
        let mut last = Instant::now();
        self.publish();
        loop {
            tokio::select! {
                biased;
                _ = raft_tick.tick() => {
                    let now = Instant::now();
                    let output = self.node.tick(now - last);
                    last = now;
                    self.absorb(output);
                    self.expire_waiters(now);
                }
                Some(envelope) = inbox.recv() => {
                    let output = self.node.step(envelope);
                    self.absorb(output);
                }
                Some(request) = requests.recv() => self.handle_request(request),
                _ = flush.tick() => self.flush_heartbeats(),
                _ = schedule.tick() => self.schedule(),
                else => break,
            }
            self.publish();
        }
    }

    fn handle_request(&mut self, request: Request) {
        match request {
            Request::Propose { command, reply } => {
                let data = serde_json::to_vec(&command).expect("commands encode");
                match self.node.propose(data) {
                    Ok(proposal) => {
                        let deadline = Instant::now() + self.inner.config.proposal_timeout;
                        self.waiters.insert(proposal.index, Waiter { term: proposal.term, deadline, reply });
                        self.absorb(Ok(proposal.output));
                    }
                    Err(RaftError::NotLeader { leader_hint }) => {
                        let _ = reply.send(Err(self.inner.not_leader(leader_hint)));
                    }
                    Err(e) => {
                        let _ = reply.send(Err(ApiError::unavailable(e.to_string())));
                    }
                }
            }
            Request::Heartbeat { record, reply } => {
                let _ = reply.send(self.accept_heartbeat(record));
            }
        }
    }

    fn accept_heartbeat(&mut self, record: HeartbeatRecord) -> Result<(), ApiError> {
        if self.node.role() != Role::Leader {
            return Err(self.inner.not_leader(self.node.leader_id()));
        }
        // An unready leader may not have applied the latest decisions yet, and
        // a wrong not-found would make the agent delete a live workload.
        if !self.node.is_ready_leader() {
            return Err(ApiError::unavailable("leader is catching up"));
        }
        self.inner
            .kb
            .read()
            .check_heartbeat(record.cluster_id, record.app_id, &record.component, record.version)
            .map_err(rejection_error)?;
        let key = (record.cluster_id, record.app_id, record.component.clone());
        self.beats.insert(key, record);
        Ok(())
    }

    fn flush_heartbeats(&mut self) {
        if self.beats.is_empty() {
            return;
        }
        if !self.node.is_ready_leader() {
            self.beats.clear();
            return;
        }
        let beats: Vec<HeartbeatRecord> = std::mem::take(&mut self.beats).into_values().collect();
        self.propose_quietly(KbCommand::RecordHeartbeat { beats });
    }

    fn schedule(&mut self) {
        if !self.node.is_ready_leader() {
            return;
        }
        let now = self.inner.clock.now();
        let commands = {
            let kb = self.inner.kb.read();
            scheduler_tick(&kb, now, self.node.term(), &self.inner.config.scheduler, &*self.inner.scorer)
        };
        for command in commands {
            self.propose_quietly(command);
        }
    }

    fn propose_quietly(&mut self, command: KbCommand) {
        let data = serde_json::to_vec(&command).expect("commands encode");
        match self.node.propose(data) {
            Ok(proposal) => self.absorb(Ok(proposal.output)),
            Err(e) => tracing::debug!(rla = self.inner.config.rla_id, error = %e, "dropping internal proposal"),
        }
    }

    fn absorb(&mut self, output: Result<Output, RaftError>) {
        let output = match output {
            Ok(o) => o,
            Err(e) => {
                tracing::error!(rla = self.inner.config.rla_id, error = %e, "raft step failed");
                self.inner.record("rla.error", json!({ "error": e.to_string() }));
                return;
            }
        };
        if let Some(snapshot) = output.restore {
            match KnowledgeBase::restore(&snapshot.data) {
                Ok(kb) => *self.inner.kb.write() = kb,
                Err(e) => tracing::error!(rla = self.inner.config.rla_id, error = %e, "snapshot restore failed"),
            }
            let covered: Vec<LogIndex> = self.waiters.range(..=snapshot.last_index).map(|(i, _)| *i).collect();
            for index in covered {
                let waiter = self.waiters.remove(&index).expect("present");
                let _ = waiter.reply.send(Err(ApiError::unavailable("outcome folded into a snapshot")));
            }
        }
        if !output.committed.is_empty() {
            let leader = self.node.role() == Role::Leader;
            let mut kb = self.inner.kb.write();
            for entry in &output.committed {
                if entry.is_noop() {
                    continue;
                }
                let effect = match serde_json::from_slice::<KbCommand>(&entry.data) {
                    Ok(command) => {
                        let effect = kb.apply(&command);
                        if leader {
                            self.inner.record(&format!("kb.{}", command.name()), json!({ "index": entry.index, "effect": effect }));
                        }
                        Ok(effect)
                    }
                    Err(e) => {
                        tracing::error!(index = entry.index, error = %e, "undecodable log entry");
                        Err(ApiError::unavailable(format!("undecodable entry {}", entry.index)))
                    }
                };
                if let Some(waiter) = self.waiters.remove(&entry.index) {
                    let result = if waiter.term == entry.term { effect } else { Err(self.inner.not_leader(self.node.leader_id())) };
                    let _ = waiter.reply.send(result);
                }
            }
        }
        for envelope in output.messages {
            self.inner.transport.send(envelope);
        }
        if self.node.should_compact() {
            let state = self.inner.kb.read().snapshot_state();
            if let Err(e) = self.node.compact(self.node.last_applied(), state) {
                tracing::error!(rla = self.inner.config.rla_id, error = %e, "compaction failed");
            }
        }
    }

    fn expire_waiters(&mut self, now: Instant) {
        let expired: Vec<LogIndex> = self.waiters.iter().filter(|(_, w)| w.deadline <= now).map(|(i, _)| *i).collect();
        for index in expired {
            let waiter = self.waiters.remove(&index).expect("present");
            let _ = waiter.reply.send(Err(ApiError::Timeout));
        }
    }

    fn publish(&mut self) {
        let role = (self.node.role(), self.node.term(), self.node.leader_id());
        if role != self.last_role {
            if self.last_role.0 == Role::Leader && role.0 != Role::Leader {
                let error = self.inner.not_leader(role.2);
                for (_, waiter) in std::mem::take(&mut self.waiters) {
                    let _ = waiter.reply.send(Err(error.clone()));
                }
                self.beats.clear();
            }
            self.inner.record(
                "raft.role",
                json!({ "role": role.0, "term": role.1, "leader": role.2 }),
            );
            self.last_role = role;
        }
        let mut view = self.inner.view.write();
        view.ready = self.node.is_ready_leader();
        view.status = RlaStatus {
            rla_id: self.inner.config.rla_id,
            role: match role.0 {
                Role::Follower => RaftRole::Follower,
                Role::Candidate => RaftRole::Candidate,
                Role::Leader => RaftRole::Leader,
            },
            term: role.1,
            leader_id: role.2,
            leader_address: role.2.and_then(|id| self.inner.config.address_of(id)).map(str::to_string),
            commit_index: self.node.commit_index(),
            last_applied: self.node.last_applied(),
        };
    }
}
