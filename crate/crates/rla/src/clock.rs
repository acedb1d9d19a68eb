use std::time::{SystemTime, UNIX_EPOCH};

use qonnect_core::Timestamp;

/// Source of the timestamps written into the knowledge base.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall-clock milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp::from_duration(since)
    }
}

/// Milliseconds since a shared tokio instant. Follows paused test time, so
/// replicas created with the same epoch agree on every timestamp.
#[derive(Debug, Clone, Copy)]
pub struct TokioClock {
    epoch: tokio::time::Instant,
}

impl TokioClock {
    pub fn new(epoch: tokio::time::Instant) -> Self {
        Self { epoch }
    }

    pub fn starting_now() -> Self {
        Self::new(tokio::time::Instant::now())
    }
}

impl Clock for TokioClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_duration(self.epoch.elapsed())
    }
}
