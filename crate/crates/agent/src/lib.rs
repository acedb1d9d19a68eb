//! The resource agent that runs on every member cluster.
//!
//! It registers the cluster with the control plane, reports worker nodes,
//! keeps a cache of cluster addresses, applies the components scheduled
//! onto its cluster and reports their health. A not-found answer to a
//! heartbeat withdraws the component locally.
//!
//! The agent keeps nothing in memory between ticks: identity, the address
//! cache and the deployment records live in config stores on the cluster,
//! reached through [`ClusterBackend`].

mod agent;
pub mod backend;
pub mod config;
pub mod record;
pub mod render;

pub use agent::{HeartbeatOutcome, ReconcileEntry, ReconcileOutcome, ResourceAgent};
pub use backend::{BackendError, ClusterBackend, WorkloadState};
pub use config::AgentConfig;
pub use record::{AppRecord, ComponentDeployment};
