use std::path::{Path, PathBuf};
use std::time::Duration;

use qonnect_core::Domain;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Control-plane endpoints; the first is the bootstrap replica.
    pub rla_addresses: Vec<String>,
    /// Overrides the domain the backend reports.
    pub domain: Option<Domain>,
    /// Overrides the ingress address the backend reports.
    pub external_ip: Option<String>,
    #[serde(with = "qonnect_core::duration_ms")]
    pub snapshot_period: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub config_period: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub poll_period: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub heartbeat_period: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub rollout_timeout: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub retry_min: Duration,
    #[serde(with = "qonnect_core::duration_ms")]
    pub retry_max: Duration,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            rla_addresses: Vec::new(),
            domain: None,
            external_ip: None,
            snapshot_period: Duration::from_secs(5),
            config_period: Duration::from_secs(5),
            poll_period: Duration::from_secs(5),
            heartbeat_period: Duration::from_secs(10),
            rollout_timeout: Duration::from_secs(120),
            retry_min: Duration::from_millis(500),
            retry_max: Duration::from_secs(5),
        }
    }
}

impl AgentConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_yaml::from_str(text)?)
    }

    /// Reads `path`, then applies `QONNECT_*` overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config = Self::from_yaml(&text)?;
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let err = |message: String| ConfigError::Env { name: name.clone(), message };
            let ms = |v: &str| v.parse::<u64>().map(Duration::from_millis).map_err(|e| err(e.to_string()));
            match name.as_str() {
                "QONNECT_RLA_ADDRESSES" => {
                    self.rla_addresses = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                }
                "QONNECT_DOMAIN" => self.domain = Some(value.parse().map_err(|e: qonnect_core::UnknownDomain| err(e.to_string()))?),
                "QONNECT_EXTERNAL_IP" => self.external_ip = Some(value),
                "QONNECT_SNAPSHOT_PERIOD_MS" => self.snapshot_period = ms(&value)?,
                "QONNECT_CONFIG_PERIOD_MS" => self.config_period = ms(&value)?,
                "QONNECT_POLL_PERIOD_MS" => self.poll_period = ms(&value)?,
                "QONNECT_HEARTBEAT_PERIOD_MS" => self.heartbeat_period = ms(&value)?,
                "QONNECT_ROLLOUT_TIMEOUT_MS" => self.rollout_timeout = ms(&value)?,
                _ => {}
            }
        }
        Ok(())
    }
}
