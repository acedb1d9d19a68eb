use std::fmt::Write as _;
use std::path::Path;

use qonnect_core::params::{table, Profile};
use qonnect_core::EventLog;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioReport;
use crate::HarnessError;

pub const VERDICT_FILE: &str = "verdict.json";
pub const REPORT_FILE: &str = "report.txt";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Machine-readable outcome of one harness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub seed: u64,
    pub passed: bool,
    pub scenarios: Vec<ScenarioReport>,
}

impl Verdict {
    pub fn new(seed: u64, scenarios: Vec<ScenarioReport>) -> Self {
        let passed = !scenarios.is_empty() && scenarios.iter().all(|s| s.passed);
        Self { seed, passed, scenarios }
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(VERDICT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }

    /// Writes the verdict, its text rendering and the event log into `dir`.
    pub fn write(&self, dir: &Path, events: &EventLog) -> Result<(), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let json = serde_json::to_string_pretty(self).expect("verdict encodes");
        std::fs::write(dir.join(VERDICT_FILE), json).map_err(io)?;
        std::fs::write(dir.join(REPORT_FILE), render(self)).map_err(io)?;
        let file = std::fs::File::create(dir.join(EVENTS_FILE)).map_err(io)?;
        events.write_jsonl(std::io::BufWriter::new(file)).map_err(io)
    }
}

fn secs(ms: u64) -> String {
    format!("{:.1}s", ms as f64 / 1000.0)
}

pub fn render(verdict: &Verdict) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed {}: {}", verdict.seed, if verdict.passed { "PASS" } else { "FAIL" });
    for s in &verdict.scenarios {
        let _ = writeln!(
            out,
            "\nscenario {} ({}): {}  [{} .. {}]",
            s.scenario,
            s.title,
            if s.passed { "PASS" } else { "FAIL" },
            s.started_at,
            s.finished_at
        );
        for e in &s.expectations {
            let timing = match (e.elapsed_ms, e.deadline_ms) {
                (Some(t), Some(d)) => format!("{} / {}", secs(t), secs(d)),
                (None, Some(d)) => format!("missed {}", secs(d)),
                _ => String::new(),
            };
            let _ = writeln!(
                out,
                "  {} {:<36} expected {:<40} observed {:<40} {}",
                if e.passed { "ok  " } else { "FAIL" },
                e.step,
                e.expected,
                e.observed,
                timing
            );
        }
        if !s.passed {
            let _ = writeln!(out, "  timeline:");
            for ev in &s.timeline {
                let _ = writeln!(out, "    {} {:<24} {:<28} {}", ev.at, ev.source, ev.kind, ev.detail);
            }
        }
    }
    out
}

/// The per-profile attribute table the testbed feeds to the scheduler.
pub fn parameter_table() -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>10} {:>6} {:>8} {:>8}",
        "profile", "energy kWh", "price EUR/h", "bw Gbps", "cpu", "mem GiB", "disk GiB"
    );
    for profile in [Profile::Energy, Profile::Cost, Profile::Performance] {
        let p = table(profile);
        let _ = writeln!(
            out,
            "{:<12} {:>12.7} {:>12.4} {:>10.1} {:>6} {:>8} {:>8}",
            profile.as_str(),
            p.energy,
            p.pricing,
            p.bandwidth,
            p.cpu,
            p.memory,
            p.storage
        );
    }
    out
}
