//! The resource lead agent: one replica of the control plane.
//!
//! Each [`RlaHandle`] runs a Raft member, applies committed commands to its
//! own [`KnowledgeBase`](qonnect_core::KnowledgeBase) copy and, while it is
//! the ready leader, runs the scheduler loop. Writes go through Raft; reads
//! are served from the local applied state. The same [`ControlPlane`]
//! operations are exposed in-process, over HTTP ([`http::router`]) and
//! through the clients in [`client`].
//!
//! [`ControlPlane`]: qonnect_core::ControlPlane

pub mod client;
pub mod clock;
pub mod config;
pub mod http;
mod replica;
pub mod transport;

pub use client::{LocalClient, RetryPolicy, RlaClient};
pub use clock::{Clock, SystemClock, TokioClock};
pub use config::{ConfigError, RlaConfig};
pub use replica::{RlaBuilder, RlaError, RlaHandle, StorageSpec};
pub use transport::{MemNetwork, MemTransport, Transport};
