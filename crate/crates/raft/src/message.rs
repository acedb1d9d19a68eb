use serde::{Deserialize, Serialize};

use crate::{LogIndex, NodeId, Term};

/// Version stamped on every envelope. Receivers reject other versions.
pub const WIRE_VERSION: u32 = 1;

/// One replicated log entry. An empty `data` is a leader no-op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub index: LogIndex,
    pub term: Term,
    #[serde(with = "base64_bytes")]
    pub data: Vec<u8>,
}

impl Entry {
    pub fn is_noop(&self) -> bool {
        self.data.is_empty()
    }
}

/// Application state captured at `last_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_index: LogIndex,
    pub last_term: Term,
    #[serde(with = "base64_bytes")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    pub from: NodeId,
    pub to: NodeId,
    /// Sender's current term.
    pub term: Term,
    pub message: Message,
}

impl Envelope {
    pub fn new(from: NodeId, to: NodeId, term: Term, message: Message) -> Self {
        Self { version: WIRE_VERSION, from, to, term, message }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    VoteRequest {
        last_log_index: LogIndex,
        last_log_term: Term,
    },
    VoteResponse {
        granted: bool,
    },
    AppendRequest {
        prev_log_index: LogIndex,
        prev_log_term: Term,
        entries: Vec<Entry>,
        leader_commit: LogIndex,
    },
    /// On success `match_index` is the last index known to match the
    /// leader; on rejection it is the follower's hint for where to retry.
    AppendResponse {
        success: bool,
        match_index: LogIndex,
    },
    SnapshotRequest {
        snapshot: Snapshot,
    },
    SnapshotResponse {
        last_index: LogIndex,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    VoteRequest,
    VoteResponse,
    AppendRequest,
    AppendResponse,
    SnapshotRequest,
    SnapshotResponse,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::VoteRequest,
        MessageKind::VoteResponse,
        MessageKind::AppendRequest,
        MessageKind::AppendResponse,
        MessageKind::SnapshotRequest,
        MessageKind::SnapshotResponse,
    ];

    /// Path segment used by the HTTP transport (`/raft/<segment>`).
    pub fn path_segment(self) -> &'static str {
        match self {
            MessageKind::VoteRequest => "vote_request",
            MessageKind::VoteResponse => "vote_response",
            MessageKind::AppendRequest => "append_request",
            MessageKind::AppendResponse => "append_response",
            MessageKind::SnapshotRequest => "snapshot_request",
            MessageKind::SnapshotResponse => "snapshot_response",
        }
    }

    pub fn from_path_segment(segment: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.path_segment() == segment)
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::VoteRequest { .. } => MessageKind::VoteRequest,
            Message::VoteResponse { .. } => MessageKind::VoteResponse,
            Message::AppendRequest { .. } => MessageKind::AppendRequest,
            Message::AppendResponse { .. } => MessageKind::AppendResponse,
            Message::SnapshotRequest { .. } => MessageKind::SnapshotRequest,
            Message::SnapshotResponse { .. } => MessageKind::SnapshotResponse,
        }
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
