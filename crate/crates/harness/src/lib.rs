//! In-process federated testbed for QONNECT: nine simulated clusters across
//! cloud, fog and edge, a resource agent per cluster, three replicated
//! control-plane agents, and the four evaluation scenarios.
//!
//! Everything runs on the tokio clock, so a paused runtime executes the
//! scenarios in virtual time and a normal runtime in wall-clock time.

pub mod bundle;
pub mod report;
pub mod scenario;
pub mod spec;
pub mod testbed;

pub use report::Verdict;
pub use scenario::{run_scenario, run_scenarios, Expectation, ScenarioReport};
pub use spec::{ClusterSpec, Deadlines, TestbedSpec};
pub use testbed::{Placement, Testbed};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid testbed spec: {0}")]
    Spec(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("deadline exceeded: {0}")]
    Deadline(String),
    #[error("parameter mismatch: {0}")]
    Parameters(String),
    #[error("control plane: {0}")]
    Rla(#[from] qonnect_rla::RlaError),
    #[error("simulator: {0}")]
    Sim(#[from] qonnect_sim::SimError),
    #[error("{0}")]
    Io(String),
}

/// Boots a testbed and runs `scenarios` back to back.
pub async fn run(spec: TestbedSpec, scenarios: &[u8]) -> Result<(Verdict, Testbed), HarnessError> {
    let seed = spec.seed;
    let testbed = Testbed::boot(spec).await?;
    let reports = run_scenarios(&testbed, scenarios).await;
    Ok((Verdict::new(seed, reports), testbed))
}
