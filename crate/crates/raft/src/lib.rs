//! A small Raft implementation used as the replication layer of the
//! control plane.
//!
//! [`RaftNode`] is a pure, tick-driven state machine: the owner feeds it
//! elapsed time and inbound messages, and gets back an [`Output`] holding
//! outbound messages plus entries that became committed. Persistence goes
//! through the [`Storage`] trait (in-memory or a WAL + snapshot directory).
//! The [`sim`] module drives whole clusters over a seeded, lossy network and
//! checks the usual safety properties.

mod config;
mod error;
mod log;
mod message;
mod node;
pub mod sim;
mod storage;

pub use config::RaftConfig;
pub use error::{RaftError, Result, StorageError};
pub use log::RaftLog;
pub use message::{Entry, Envelope, Message, MessageKind, Snapshot, WIRE_VERSION};
pub use node::{Output, Proposal, RaftNode, RaftNodeState, Role, SnapshotMeta};
pub use storage::{FileStorage, HardState, MemStorage, PersistentState, Storage};

/// Identifier of a Raft member.
pub type NodeId = u64;
/// Election term.
pub type Term = u64;
/// Position in the replicated log (1-based; 0 means "before the first entry").
pub type LogIndex = u64;
