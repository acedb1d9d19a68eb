use std::collections::BTreeSet;
use std::time::Duration;

use crate::error::RaftError;
use crate::NodeId;

/// Static configuration of one Raft member.
#[derive(Debug, Clone)]
pub struct RaftConfig {
    pub id: NodeId,
    /// Every member of the cluster, including `id`.
    pub members: Vec<NodeId>,
    pub election_timeout_min: Duration,
    pub election_timeout_max: Duration,
    pub heartbeat_interval: Duration,
    /// Upper bound on entries carried by one append request.
    pub max_append_entries: usize,
    /// Applied entries past the last snapshot before the owner should compact.
    pub snapshot_threshold: u64,
    /// Seed for the election-timeout jitter.
    pub seed: u64,
}

impl RaftConfig {
    pub fn new(id: NodeId, members: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            id,
            members: members.into_iter().collect(),
            election_timeout_min: Duration::from_millis(150),
            election_timeout_max: Duration::from_millis(300),
            heartbeat_interval: Duration::from_millis(50),
            max_append_entries: 64,
            snapshot_threshold: 1000,
            seed: id,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snapshot_threshold(mut self, threshold: u64) -> Self {
        self.snapshot_threshold = threshold;
        self
    }

    pub fn with_timing(mut self, election_min: Duration, election_max: Duration, heartbeat: Duration) -> Self {
        self.election_timeout_min = election_min;
        self.election_timeout_max = election_max;
        self.heartbeat_interval = heartbeat;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), RaftError> {
        let unique: BTreeSet<_> = self.members.iter().collect();
        if unique.len() != self.members.len() {
            return Err(RaftError::InvalidConfig("duplicate member ids".into()));
        }
        if !unique.contains(&self.id) {
            return Err(RaftError::InvalidConfig(format!("members do not include self ({})", self.id)));
        }
        if self.election_timeout_min > self.election_timeout_max {
            return Err(RaftError::InvalidConfig("election timeout min exceeds max".into()));
        }
        if self.heartbeat_interval >= self.election_timeout_min {
            return Err(RaftError::InvalidConfig("heartbeat interval must be below the election timeout".into()));
        }
        if self.max_append_entries == 0 {
            return Err(RaftError::InvalidConfig("max_append_entries must be positive".into()));
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.members.len() / 2 + 1
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().copied().filter(move |&m| m != self.id)
    }
}
