//! Shared model for the QONNECT control plane: the knowledge base state
//! machine, Borda-count placement, bundle validation, profile parameters and
//! the control-plane API types.

pub mod api;
pub mod events;
pub mod kb;
pub mod manifest;
pub mod model;
pub mod params;
pub mod scheduler;

pub use api::{ApiError, ControlPlane, ScheduledApplicationPayload};
pub use events::{Event, EventLog};
pub use kb::{Effect, KbCommand, KnowledgeBase};
pub use model::*;
pub use scheduler::{BordaScorer, PlacementResult, Scorer, SchedulerConfig};

/// Serde helper for durations written as integer milliseconds.
pub mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
