use thiserror::Error;

use crate::{LogIndex, NodeId};

pub type Result<T, E = RaftError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RaftError {
    #[error("not the leader (last known leader: {leader_hint:?})")]
    NotLeader { leader_hint: Option<NodeId> },
    #[error("cannot compact up to {requested}: only {last_applied} applied")]
    CompactBeyondApplied { requested: LogIndex, last_applied: LogIndex },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt state: {0}")]
    Corrupt(String),
    #[error("encode: {0}")]
    Encode(#[from] serde_json::Error),
}
