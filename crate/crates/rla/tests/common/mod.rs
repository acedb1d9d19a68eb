#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Duration;

use qonnect_core::api::RegisterRequest;
use qonnect_core::params::{table, Profile};
use qonnect_core::{ControlPlane, NodeReport};
use qonnect_rla::{MemNetwork, RlaConfig, RlaHandle, StorageSpec, TokioClock};
use qonnect_raft::MemStorage;
use uuid::Uuid;

pub struct Replicas {
    pub network: MemNetwork,
    pub handles: Vec<RlaHandle>,
}

pub fn peers(n: u64) -> BTreeMap<u64, String> {
    (1..=n).map(|id| (id, format!("10.0.0.{id}:7000"))).collect()
}

pub fn config(id: u64, n: u64) -> RlaConfig {
    let mut config = RlaConfig::new(id, peers(n));
    config.seed = 11;
    config.scheduler.tick = Duration::from_secs(1);
    config
}

pub fn replicas(n: u64) -> Replicas {
    replicas_with(n, |_| StorageSpec::Memory(MemStorage::new()), |_| {})
}

pub fn replicas_with(
    n: u64,
    storage: impl Fn(u64) -> StorageSpec,
    tweak: impl Fn(&mut RlaConfig),
) -> Replicas {
    let network = MemNetwork::new();
    let clock = TokioClock::starting_now();
    let mut handles = Vec::new();
    for id in 1..=n {
        let mut config = config(id, n);
        tweak(&mut config);
        let handle = RlaHandle::builder(config)
            .clock(clock)
            .transport(network.transport(id))
            .storage(storage(id))
            .build()
            .unwrap();
        let sink = handle.clone();
        network.attach(id, move |env| sink.deliver(env));
        handle.start().unwrap();
        handles.push(handle);
    }
    Replicas { network, handles }
}

impl Replicas {
    pub fn leader(&self) -> Option<RlaHandle> {
        let leaders: Vec<_> = self.handles.iter().filter(|h| h.is_leader()).collect();
        let max_term = leaders.iter().map(|h| h.status_view().term).max()?;
        leaders.into_iter().find(|h| h.status_view().term == max_term).cloned()
    }

    pub async fn wait_leader(&self, limit: Duration) -> Option<RlaHandle> {
        let deadline = tokio::time::Instant::now() + limit;
        while tokio::time::Instant::now() < deadline {
            if let Some(l) = self.leader() {
                // wait for the leader's no-op to commit so writes are accepted
                tokio::time::sleep(Duration::from_millis(100)).await;
                return Some(l);
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        None
    }

    pub fn followers(&self) -> Vec<RlaHandle> {
        self.handles.iter().filter(|h| h.is_running() && !h.is_leader()).cloned().collect()
    }

    pub fn get(&self, id: u64) -> &RlaHandle {
        &self.handles[(id - 1) as usize]
    }
}

pub fn report(name: &str, profile: Profile) -> NodeReport {
    let p = table(profile);
    NodeReport {
        name: name.into(),
        control_plane: false,
        ready: true,
        schedulable: true,
        pressured: false,
        energy: p.energy,
        pricing: p.pricing,
        cpu: p.cpu,
        memory: p.memory,
        bandwidth: p.bandwidth,
        storage: p.storage,
    }
}

pub async fn register(cp: &dyn ControlPlane, ip: &str, domain: &str) -> Uuid {
    cp.register(RegisterRequest { external_ip: ip.into(), domain: domain.into() }).await.unwrap().cluster_id
}

pub fn bundle(name: &str, qos: (f64, f64, f64), components: &[(&str, &str)]) -> String {
    let mut text = format!(
        "application:\n  name: {name}\n  labels: {{team: test}}\n  qos: {{energy: {}, pricing: {}, performance: {}}}\n",
        qos.0, qos.1, qos.2
    );
    for (component, domain) in components {
        text.push_str(&format!(
            "---\ncomponent: {component}\ndomain: {domain}\nobjects:\n  - kind: Deployment\n    metadata: {{name: {component}}}\n    spec: {{replicas: 1}}\n  - kind: Ingress\n    metadata: {{name: {component}}}\n    spec:\n      rules:\n        - http:\n            paths:\n              - path: /{name}/{component}\n"
        ));
    }
    text
}
