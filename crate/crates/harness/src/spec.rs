use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use qonnect_agent::AgentConfig;
use qonnect_core::params::Profile;
use qonnect_core::{Domain, SchedulerConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub domain: Domain,
    pub profile: Profile,
    pub ingress_ip: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub hosts_rla: bool,
}

fn default_workers() -> usize {
    2
}

impl ClusterSpec {
    pub fn name(&self) -> String {
        format!("{}-{}", self.domain, self.profile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Deadlines {
    #[serde(with = "qonnect_core::duration_ms")]
    pub bootstrap: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub placement: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub migration: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub reelection: Duration,
}

impl Default for Deadlines {
    fn default() -> Self {
        Self {
            bootstrap: Duration::from_secs(60),
            placement: Duration::from_secs(60),
            migration: Duration::from_secs(90),
            reelection: Duration::from_secs(30),
        }
    }
}

/// Everything needed to boot the federated testbed. Loadable from YAML;
/// omitted fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedSpec {
    pub clusters: Vec<ClusterSpec>,
    pub seed: u64,
    /// Simulated-cluster time step taken by the driver.
    #[serde(with = "qonnect_core::duration_ms")]
    pub sim_step: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub rollout_latency: Duration,
    pub agent: AgentConfig,
    pub scheduler: SchedulerConfig,
    pub deadlines: Deadlines,
}

impl Default for TestbedSpec {
    fn default() -> Self {
        let mut clusters = Vec::new();
        for (d, domain) in Domain::ALL.into_iter().enumerate() {
            for (p, profile) in [Profile::Performance, Profile::Energy, Profile::Cost].into_iter().enumerate() {
                clusters.push(ClusterSpec {
                    domain,
                    profile,
                    ingress_ip: format!("10.{}.{}.10", d + 1, p + 1),
                    workers: default_workers(),
                    hosts_rla: domain == Domain::Cloud,
                });
            }
        }
        Self {
            clusters,
            seed: 1,
            sim_step: Duration::from_millis(500),
            rollout_latency: Duration::from_secs(2),
            agent: AgentConfig::default(),
            scheduler: SchedulerConfig::default(),
            deadlines: Deadlines::default(),
        }
    }
}

impl TestbedSpec {
    pub fn from_yaml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_yaml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Spec(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Nine clusters, one per (domain, profile), and at least one control
    /// plane replica on a cloud cluster.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        let pairs: BTreeSet<(Domain, Profile)> = self.clusters.iter().map(|c| (c.domain, c.profile)).collect();
        if self.clusters.len() != 9 || pairs.len() != 9 {
            return bad(format!("expected 9 clusters covering every domain/profile pair, got {}", self.clusters.len()));
        }
        let ips: BTreeSet<&str> = self.clusters.iter().map(|c| c.ingress_ip.as_str()).collect();
        if ips.len() != self.clusters.len() {
            return bad("ingress addresses must be unique".into());
        }
        if !self.clusters.iter().any(|c| c.hosts_rla && c.domain == Domain::Cloud) {
            return bad("at least one cloud cluster must host a control-plane replica".into());
        }
        if let Some(c) = self.clusters.iter().find(|c| c.workers == 0) {
            return bad(format!("{} has no workers", c.name()));
        }
        if self.sim_step.is_zero() {
            return bad("sim_step must be positive".into());
        }
        Ok(())
    }

    pub fn rla_hosts(&self) -> impl Iterator<Item = &ClusterSpec> {
        self.clusters.iter().filter(|c| c.hosts_rla)
    }
}
