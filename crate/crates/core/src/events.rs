//! Line-delimited structured event log shared by all components.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: Timestamp,
    /// Emitting component, e.g. `rla-1`, `ra/edge-performance`, `sim/fog-cost`.
    pub source: String,
    pub kind: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

/// Cheap to clone; all clones append to the same log.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Arc<Mutex<Vec<Event>>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, at: Timestamp, source: impl Into<String>, kind: impl Into<String>, detail: serde_json::Value) {
        let event = Event { at, source: source.into(), kind: kind.into(), detail };
        tracing::debug!(target: "qonnect::events", at = %event.at, source = %event.source, kind = %event.kind, detail = %event.detail);
        self.events.lock().expect("event log lock").push(event);
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().expect("event log lock").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("event log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for event in self.snapshot() {
            serde_json::to_writer(&mut out, &event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
