use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use qonnect_agent::{ClusterBackend, ResourceAgent};
use qonnect_core::kb::cluster_id_for;
use qonnect_core::params::{table, Profile};
use qonnect_core::{ComponentStatus, ControlPlane, Domain, EventLog, KnowledgeBase, Timestamp};
use qonnect_rla::{LocalClient, MemNetwork, RlaConfig, RlaHandle, TokioClock};
use qonnect_sim::{shared, Fault, SharedCluster, SimCluster, SimClusterConfig};
use serde::Serialize;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use uuid::Uuid;

use crate::spec::{ClusterSpec, TestbedSpec};
use crate::HarnessError;

const POLL: Duration = Duration::from_millis(250);

pub struct Cluster {
    pub spec: ClusterSpec,
    pub id: Uuid,
    pub sim: SharedCluster,
    pub rla: Option<u64>,
    agent: parking_lot::Mutex<Option<JoinHandle<()>>>,
}

impl Cluster {
    pub fn name(&self) -> String {
        self.spec.name()
    }

    pub fn agent_alive(&self) -> bool {
        self.sim.lock().ra_alive()
    }

    /// True when the app's namespace holds `component`'s workload fully ready.
    pub fn runs(&self, app: &str, component: &str) -> bool {
        self.sim.lock().workload(app, component).is_some_and(|w| w.desired > 0 && w.ready == w.desired)
    }

    pub fn has_namespace(&self, name: &str) -> bool {
        self.sim.lock().namespace(name).is_some()
    }
}

/// Where one component currently sits according to the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub component: String,
    pub domain: Domain,
    pub status: ComponentStatus,
    pub cluster_id: Option<Uuid>,
    pub cluster: Option<String>,
    pub nodes: Vec<String>,
}

/// Nine simulated clusters with their agents, plus the replicated control
/// plane, all in one process on the tokio clock.
pub struct Testbed {
    pub spec: TestbedSpec,
    pub events: EventLog,
    pub network: MemNetwork,
    pub rlas: Vec<RlaHandle>,
    pub clusters: Vec<Cluster>,
    client: LocalClient,
    driver: JoinHandle<()>,
    started: Instant,
}

impl Testbed {
    /// Boots everything and waits until a leader is elected, every cluster
    /// is registered and every cluster's nodes are in the knowledge base.
    pub async fn boot(spec: TestbedSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let events = EventLog::new();
        let network = MemNetwork::new();
        let clock = TokioClock::starting_now();
        let started = Instant::now();

        let mut clusters = Vec::new();
        let mut peers = BTreeMap::new();
        for (i, c) in spec.clusters.iter().enumerate() {
            let mut config = SimClusterConfig::new(c.domain, c.profile, c.ingress_ip.clone()).with_seed(spec.seed.wrapping_mul(31).wrapping_add(i as u64));
            config.workers = c.workers;
            config.rollout_latency = spec.rollout_latency;
            let mut rla = None;
            if c.hosts_rla {
                config = config.with_rla();
                let id = peers.len() as u64 + 1;
                peers.insert(id, format!("{}:7000", c.ingress_ip));
                rla = Some(id);
            }
            let sim = shared(SimCluster::new(config).with_event_sink(events.clone()));
            let id = cluster_id_for(&c.ingress_ip, c.domain);
            clusters.push(Cluster { spec: c.clone(), id, sim, rla, agent: parking_lot::Mutex::new(None) });
        }

        let mut rlas = Vec::new();
        for &id in peers.keys() {
            let mut config = RlaConfig::new(id, peers.clone());
            config.seed = spec.seed.wrapping_mul(1000).wrapping_add(id);
            config.scheduler = spec.scheduler;
            let handle = RlaHandle::builder(config)
                .clock(clock)
                .transport(network.transport(id))
                .events(events.clone())
                .build()?;
            let sink = handle.clone();
            network.attach(id, move |env| sink.deliver(env));
            handle.start()?;
            rlas.push(handle);
        }

        let sims: Vec<SharedCluster> = clusters.iter().map(|c| c.sim.clone()).collect();
        let step = spec.sim_step;
        let driver = tokio::spawn(async move {
            let mut next = Instant::now() + step;
            loop {
                tokio::time::sleep_until(next).await;
                next += step;
                for sim in &sims {
                    let _ = sim.lock().step(step);
                }
            }
        });

        let first = *peers.keys().next().expect("validated: one replica at least");
        let testbed = Self {
            client: LocalClient::new(rlas.clone()).starting_at(first),
            spec,
            events,
            network,
            rlas,
            clusters,
            driver,
            started,
        };
        for c in &testbed.clusters {
            testbed.spawn_agent(c);
        }
        testbed.wait_ready().await?;
        Ok(testbed)
    }

    fn spawn_agent(&self, cluster: &Cluster) {
        let first = cluster.rla.or_else(|| self.rlas.first().map(RlaHandle::id)).unwrap_or(1);
        let control = Arc::new(LocalClient::new(self.rlas.clone()).starting_at(first));
        let backend: Arc<dyn ClusterBackend> = Arc::new(cluster.sim.clone());
        let agent = ResourceAgent::new(self.spec.agent.clone(), backend, control).with_events(self.events.clone());
        *cluster.agent.lock() = Some(tokio::spawn(agent.run()));
    }

    async fn wait_ready(&self) -> Result<(), HarnessError> {
        let limit = self.spec.deadlines.bootstrap;
        let ready = wait_for(limit, || {
            let Some(leader) = self.leader() else { return false };
            leader.with_kb(|kb| {
                self.clusters.iter().all(|c| kb.cluster(c.id).is_some() && kb.nodes(c.id).len() == c.spec.workers)
            })
        })
        .await;
        if ready.is_none() {
            return Err(HarnessError::Deadline(format!("testbed not ready within {limit:?}")));
        }
        self.check_parameters()
    }

    /// Every node in the knowledge base carries exactly its profile's values.
    pub fn check_parameters(&self) -> Result<(), HarnessError> {
        self.kb(|kb| {
            for c in &self.clusters {
                let want = table(c.spec.profile);
                for n in kb.nodes(c.id) {
                    let got = (n.energy, n.pricing, n.bandwidth, n.cpu, n.memory, n.storage);
                    let expected = (want.energy, want.pricing, want.bandwidth, want.cpu, want.memory, want.storage);
                    if got != expected {
                        return Err(HarnessError::Parameters(format!("{}/{}: {got:?} != {expected:?}", c.name(), n.node_name)));
                    }
                }
            }
            Ok(())
        })
    }

    pub fn client(&self) -> &LocalClient {
        &self.client
    }

    pub fn control(&self) -> &dyn ControlPlane {
        &self.client
    }

    /// Time since boot on the tokio clock.
    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::from_duration(self.elapsed())
    }

    /// The running leader with the highest term.
    pub fn leader(&self) -> Option<&RlaHandle> {
        self.rlas.iter().filter(|r| r.is_leader()).max_by_key(|r| r.status_view().term)
    }

    pub fn rla(&self, id: u64) -> Option<&RlaHandle> {
        self.rlas.iter().find(|r| r.id() == id)
    }

    /// Reads the leader's knowledge base, or any running replica's.
    pub fn kb<T>(&self, f: impl FnOnce(&KnowledgeBase) -> T) -> T {
        let replica = self.leader().or_else(|| self.rlas.iter().find(|r| r.is_running())).unwrap_or(&self.rlas[0]);
        replica.with_kb(f)
    }

    pub fn cluster(&self, domain: Domain, profile: Profile) -> &Cluster {
        self.clusters
            .iter()
            .find(|c| c.spec.domain == domain && c.spec.profile == profile)
            .expect("validated: every pair present")
    }

    pub fn cluster_by_id(&self, id: Uuid) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn app_id(&self, name: &str) -> Option<Uuid> {
        self.kb(|kb| kb.application_by_name(name).filter(|a| a.is_live()).map(|a| a.app_id))
    }

    pub fn placements(&self, app: &str) -> Vec<Placement> {
        self.kb(|kb| {
            let Some(record) = kb.application_by_name(app).filter(|a| a.is_live()) else { return Vec::new() };
            record
                .components
                .iter()
                .map(|c| {
                    let decision = c.decision.as_ref().filter(|_| c.status.is_placed());
                    Placement {
                        component: c.name.clone(),
                        domain: c.domain,
                        status: c.status,
                        cluster_id: decision.map(|d| d.cluster_id),
                        cluster: decision.and_then(|d| self.cluster_by_id(d.cluster_id)).map(Cluster::name),
                        nodes: decision.map(|d| d.node_names.clone()).unwrap_or_default(),
                    }
                })
                .collect()
        })
    }

    /// The component is decided onto `cluster` and runs there.
    pub fn placed_on(&self, app: &str, component: &str, cluster: &Cluster) -> bool {
        let placed = self.placements(app).iter().any(|p| p.component == component && p.cluster_id == Some(cluster.id));
        placed && cluster.runs(app, component)
    }

    pub fn kill_agent(&self, domain: Domain, profile: Profile) -> Result<(), HarnessError> {
        let cluster = self.cluster(domain, profile);
        cluster.sim.lock().inject_fault(Fault::KillRa)?;
        Ok(())
    }

    /// Restarts a killed agent over its cluster's persisted state.
    pub fn restart_agent(&self, domain: Domain, profile: Profile) {
        let cluster = self.cluster(domain, profile);
        if let Some(old) = cluster.agent.lock().take() {
            old.abort();
        }
        cluster.sim.lock().restart_ra();
        self.spawn_agent(cluster);
    }

    /// Kills a control-plane replica and marks its host cluster.
    pub fn kill_rla(&self, id: u64) -> Result<(), HarnessError> {
        let rla = self.rla(id).ok_or_else(|| HarnessError::Spec(format!("no replica {id}")))?;
        rla.kill();
        if let Some(c) = self.clusters.iter().find(|c| c.rla == Some(id)) {
            c.sim.lock().inject_fault(Fault::KillRla)?;
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        self.driver.abort();
        for c in &self.clusters {
            if let Some(task) = c.agent.lock().take() {
                task.abort();
            }
        }
        for r in &self.rlas {
            r.kill();
        }
    }
}

impl Drop for Testbed {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Polls `done` until it holds or `limit` passes. Returns the time taken.
pub async fn wait_for(limit: Duration, mut done: impl FnMut() -> bool) -> Option<Duration> {
    let start = Instant::now();
    loop {
        if done() {
            return Some(start.elapsed());
        }
        if start.elapsed() >= limit {
            return None;
        }
        tokio::time::sleep(POLL).await;
    }
}
