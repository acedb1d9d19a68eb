use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use qonnect_core::SchedulerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlaConfig {
    pub rla_id: u64,
    pub listen: String,
    /// Every member of the deployment, this one included.
    pub peers: BTreeMap<u64, String>,
    pub data_dir: Option<PathBuf>,
    /// Marks the replica agents contact first; membership is static either way.
    pub bootstrap: bool,
    pub seed: u64,
    pub scheduler: SchedulerConfig,
    #[serde(with = "qonnect_core::duration_ms")]
    pub heartbeat_flush: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub proposal_timeout: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub raft_tick: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub election_timeout_min: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub election_timeout_max: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub heartbeat_interval: Duration,
    pub snapshot_threshold: u64,
}

impl Default for RlaConfig {
    fn default() -> Self {
        Self {
            rla_id: 1,
            listen: "127.0.0.1:7001".into(),
            peers: BTreeMap::from([(1, "127.0.0.1:7001".into())]),
            data_dir: None,
            bootstrap: false,
            seed: 0,
            scheduler: SchedulerConfig::default(),
            heartbeat_flush: Duration::from_secs(1),
            proposal_timeout: Duration::from_secs(5),
            raft_tick: Duration::from_millis(10),
            election_timeout_min: Duration::from_millis(150),
            election_timeout_max: Duration::from_millis(300),
            heartbeat_interval: Duration::from_millis(50),
            snapshot_threshold: 1000,
        }
    }
}

impl RlaConfig {
    pub fn new(rla_id: u64, peers: BTreeMap<u64, String>) -> Self {
        let listen = peers.get(&rla_id).cloned().unwrap_or_default();
        Self { rla_id, listen, peers, ..Self::default() }
    }

    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_yaml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, then applies `QONNECT_*` overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: Self = serde_yaml::from_str(&text)?;
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let err = |message: String| ConfigError::Env { name: name.clone(), message };
            let ms = |v: &str| v.parse::<u64>().map(Duration::from_millis).map_err(|e| err(e.to_string()));
            match name.as_str() {
                "QONNECT_RLA_ID" => self.rla_id = value.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                "QONNECT_LISTEN" => self.listen = value,
                "QONNECT_PEERS" => self.peers = parse_peers(&value).map_err(err)?,
                "QONNECT_DATA_DIR" => self.data_dir = Some(value.into()),
                "QONNECT_BOOTSTRAP" => self.bootstrap = matches!(value.as_str(), "1" | "true" | "yes"),
                "QONNECT_SEED" => self.seed = value.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                "QONNECT_SCHEDULER_TICK_MS" => self.scheduler.tick = ms(&value)?,
                "QONNECT_GRACE_MS" => self.scheduler.grace = ms(&value)?,
                "QONNECT_STALENESS_MS" => self.scheduler.staleness = ms(&value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.peers.contains_key(&self.rla_id) {
            return Err(ConfigError::Invalid(format!("peers must include rla_id {}", self.rla_id)));
        }
        if self.election_timeout_min > self.election_timeout_max || self.heartbeat_interval >= self.election_timeout_min {
            return Err(ConfigError::Invalid("heartbeat < election_timeout_min <= election_timeout_max required".into()));
        }
        if self.raft_tick.is_zero() || self.scheduler.tick.is_zero() || self.heartbeat_flush.is_zero() {
            return Err(ConfigError::Invalid("periods must be non-zero".into()));
        }
        Ok(())
    }

    pub fn address_of(&self, id: u64) -> Option<&str> {
        self.peers.get(&id).map(String::as_str)
    }
}

/// Parses `1=host:port,2=host:port`.
pub fn parse_peers(text: &str) -> Result<BTreeMap<u64, String>, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (id, addr) = pair.split_once('=').ok_or_else(|| format!("expected id=address, got `{pair}`"))?;
            let id = id.trim().parse::<u64>().map_err(|e| format!("bad id `{id}`: {e}"))?;
            Ok((id, addr.trim().to_string()))
        })
        .collect()
}
