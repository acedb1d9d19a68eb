//! The four evaluation scenarios, run against a booted [`Testbed`].

use std::collections::BTreeMap;
use std::time::Duration;

use qonnect_core::api::SubmitRequest;
use qonnect_core::params::Profile;
use qonnect_core::{ComponentStatus, Domain, Event, QosVector, Timestamp};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::bundle::{bookinfo, BOOKINFO_COMPONENTS, BOOKINFO_NAME};
use crate::testbed::{wait_for, Testbed};

const POLL: Duration = Duration::from_millis(250);

pub const PERFORMANCE: QosVector = QosVector { energy: 0.0, pricing: 0.0, performance: 1.0 };
pub const ENERGY: QosVector = QosVector { energy: 1.0, pricing: 0.0, performance: 0.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub step: String,
    pub expected: String,
    pub observed: String,
    pub deadline_ms: Option<u64>,
    pub elapsed_ms: Option<u64>,
    pub passed: bool,
}

impl Expectation {
    fn new(step: impl Into<String>, expected: impl Into<String>, observed: impl Into<String>, passed: bool) -> Self {
        Self {
            step: step.into(),
            expected: expected.into(),
            observed: observed.into(),
            deadline_ms: None,
            elapsed_ms: None,
            passed,
        }
    }

    fn timed(mut self, deadline: Duration, elapsed: Option<Duration>) -> Self {
        self.deadline_ms = Some(deadline.as_millis() as u64);
        self.elapsed_ms = elapsed.map(|d| d.as_millis() as u64);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: u8,
    pub title: String,
    pub seed: u64,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub expectations: Vec<Expectation>,
    pub passed: bool,
    pub timeline: Vec<Event>,
}

impl ScenarioReport {
    pub fn expectation(&self, step: &str) -> Option<&Expectation> {
        self.expectations.iter().find(|e| e.step == step)
    }
}

pub fn title(scenario: u8) -> &'static str {
    match scenario {
        1 => "deploy prioritizing performance",
        2 => "switch QoS to energy efficiency",
        3 => "resource agent failure on edge performance cluster",
        4 => "control-plane leader failure",
        _ => "unknown scenario",
    }
}

pub async fn run_scenario(tb: &Testbed, scenario: u8) -> ScenarioReport {
    let started_at = tb.now();
    let expectations = match scenario {
        1 => scenario_1(tb).await,
        2 => scenario_2(tb).await,
        3 => scenario_3(tb).await,
        4 => scenario_4(tb).await,
        n => vec![Expectation::new("scenario", "1, 2, 3 or 4", n.to_string(), false)],
    };
    let finished_at = tb.now();
    let passed = !expectations.is_empty() && expectations.iter().all(|e| e.passed);
    let timeline = tb
        .events
        .snapshot()
        .into_iter()
        .filter(|e| e.at >= started_at && e.at <= finished_at && on_timeline(&e.kind))
        .collect();
    ScenarioReport { scenario, title: title(scenario).into(), seed: tb.spec.seed, started_at, finished_at, expectations, passed, timeline }
}

/// Runs the scenarios in order on one deployment.
pub async fn run_scenarios(tb: &Testbed, scenarios: &[u8]) -> Vec<ScenarioReport> {
    let mut reports = Vec::new();
    for &n in scenarios {
        reports.push(run_scenario(tb, n).await);
    }
    reports
}

fn on_timeline(kind: &str) -> bool {
    !matches!(kind, "kb.record_heartbeat" | "kb.put_node_snapshot" | "kb.register_cluster" | "ra.identity_loaded")
}

async fn scenario_1(tb: &Testbed) -> Vec<Expectation> {
    let mut out = vec![deploy(tb, BOOKINFO_NAME, PERFORMANCE).await];
    if out[0].passed {
        out.extend(expect_profile(tb, BOOKINFO_NAME, Profile::Performance, tb.spec.deadlines.placement).await);
    }
    out
}

async fn scenario_2(tb: &Testbed) -> Vec<Expectation> {
    let mut out = ensure_performance(tb).await;
    if out.iter().any(|e| !e.passed) {
        return out;
    }
    let old: Vec<(&str, Domain)> = BOOKINFO_COMPONENTS.to_vec();
    let since = tb.now();
    let update = tb.control().update_qos(BOOKINFO_NAME, ENERGY).await;
    out.push(Expectation::new("qos update to energy", "accepted", format!("{update:?}"), update.is_ok()));
    if update.is_err() {
        return out;
    }
    let limit = tb.spec.deadlines.migration;
    out.extend(expect_profile(tb, BOOKINFO_NAME, Profile::Energy, limit).await);

    // old namespaces go away through the withdrawn-heartbeat path
    let mut by_cluster: BTreeMap<Domain, Vec<&str>> = BTreeMap::new();
    for (component, domain) in &old {
        by_cluster.entry(*domain).or_default().push(component);
    }
    for (domain, components) in by_cluster {
        let cluster = tb.cluster(domain, Profile::Performance);
        let elapsed = since_deadline(tb, since, limit, || !cluster.has_namespace(BOOKINFO_NAME)).await;
        let source = format!("ra/{}", cluster.name());
        let events: Vec<Event> = tb.events.snapshot().into_iter().filter(|e| e.at >= since && e.source == source).collect();
        let withdrawn: Vec<String> = events
            .iter()
            .filter(|e| e.kind == "ra.withdrawn")
            .filter_map(|e| e.detail.get("component").and_then(|c| c.as_str()).map(String::from))
            .collect();
        let deleted = events.iter().any(|e| e.kind == "ra.namespace_deleted");
        let all_withdrawn = components.iter().all(|c| withdrawn.iter().any(|w| w == c));
        let observed = format!(
            "namespace {}, withdrawn {:?}",
            if cluster.has_namespace(BOOKINFO_NAME) { "present" } else { "deleted" },
            withdrawn
        );
        out.push(
            Expectation::new(
                format!("{} cleaned up", cluster.name()),
                format!("namespace deleted after heartbeat 404 for {components:?}"),
                observed,
                elapsed.is_some() && all_withdrawn && deleted,
            )
            .timed(limit, elapsed),
        );
    }
    out
}

async fn scenario_3(tb: &Testbed) -> Vec<Expectation> {
    let mut out = ensure_performance(tb).await;
    if out.iter().any(|e| !e.passed) {
        return out;
    }
    let failed = tb.cluster(Domain::Edge, Profile::Performance);
    let Some(app_id) = tb.app_id(BOOKINFO_NAME) else {
        out.push(Expectation::new("application present", BOOKINFO_NAME, "missing", false));
        return out;
    };
    let reporting = wait_for(tb.spec.deadlines.placement, || healthy(tb, BOOKINFO_NAME, "ratings")).await;
    out.push(
        Expectation::new("setup: ratings heartbeating", "Healthy", format!("{:?}", status(tb, BOOKINFO_NAME, "ratings")), reporting.is_some())
            .timed(tb.spec.deadlines.placement, reporting),
    );
    if reporting.is_none() {
        return out;
    }
    let kill = tb.kill_agent(Domain::Edge, Profile::Performance);
    out.push(Expectation::new(format!("kill agent on {}", failed.name()), "killed", format!("{kill:?}"), kill.is_ok()));
    let killed_at = tb.now();
    let start = Instant::now();
    let limit = tb.spec.deadlines.migration;
    let mut last_heartbeat = None;
    let mut elapsed = None;
    while start.elapsed() < limit {
        let ratings = tb.placements(BOOKINFO_NAME).into_iter().find(|p| p.component == "ratings");
        if ratings.as_ref().is_some_and(|p| p.cluster_id == Some(failed.id)) {
            let seen = tb.kb(|kb| kb.application(app_id).and_then(|a| a.component("ratings")).and_then(|c| c.last_heartbeat));
            last_heartbeat = last_heartbeat.max(seen);
        }
        let moved = ratings.and_then(|p| p.cluster_id).and_then(|id| tb.cluster_by_id(id));
        if let Some(c) = moved {
            if c.spec.domain == Domain::Edge && c.id != failed.id && c.runs(BOOKINFO_NAME, "ratings") {
                elapsed = Some(start.elapsed());
                break;
            }
        }
        tokio::time::sleep(POLL).await;
    }

    let grace = tb.spec.scheduler.grace;
    let requeued_at = tb
        .events
        .snapshot()
        .into_iter()
        .filter(|e| e.kind == "kb.requeue_component" && e.at >= killed_at)
        .find(|e| e.detail.pointer("/effect/component").and_then(|c| c.as_str()) == Some("ratings"))
        .map(|e| e.at);
    let (observed, passed) = match (requeued_at, last_heartbeat) {
        (Some(at), Some(hb)) => {
            let gap = at.since(hb);
            (format!("requeued {:.1} s after last heartbeat", gap.as_secs_f64()), gap >= grace)
        }
        (Some(_), None) => ("requeued, no heartbeat seen".into(), false),
        (None, _) => ("not requeued".into(), false),
    };
    out.push(Expectation::new("ratings requeued after grace", format!(">= {} s after last heartbeat", grace.as_secs()), observed, passed));

    let now_on = tb.placements(BOOKINFO_NAME).into_iter().find(|p| p.component == "ratings").and_then(|p| p.cluster);
    out.push(
        Expectation::new(
            "ratings redeployed",
            "edge-energy or edge-cost",
            now_on.unwrap_or_else(|| "unplaced".into()),
            elapsed.is_some(),
        )
        .timed(limit, elapsed),
    );
    out
}

async fn scenario_4(tb: &Testbed) -> Vec<Expectation> {
    let mut out = Vec::new();
    let limit = tb.spec.deadlines.reelection;
    if wait_for(limit, || tb.leader().is_some()).await.is_none() {
        out.push(Expectation::new("leader before failure", "some leader", "none", false));
        return out;
    }
    let old = tb.leader().expect("just checked").id();
    let kill = tb.kill_rla(old);
    out.push(Expectation::new("kill leader", format!("rla-{old} killed"), format!("{kill:?}"), kill.is_ok()));
    let elapsed = wait_for(limit, || tb.leader().is_some_and(|l| l.id() != old)).await;
    let observed = match tb.leader() {
        Some(l) => format!("rla-{} (term {})", l.id(), l.status_view().term),
        None => "no leader".into(),
    };
    out.push(Expectation::new("new leader elected", format!("a replica other than rla-{old}"), observed, elapsed.is_some()).timed(limit, elapsed));
    if elapsed.is_none() {
        return out;
    }

    let mut k = 2;
    while tb.app_id(&format!("{BOOKINFO_NAME}-{k}")).is_some() {
        k += 1;
    }
    let name = format!("{BOOKINFO_NAME}-{k}");
    let submitted = deploy(tb, &name, PERFORMANCE).await;
    let ok = submitted.passed;
    out.push(submitted);
    if !ok {
        return out;
    }
    let limit = tb.spec.deadlines.placement;
    let checks: Vec<(String, Box<dyn Fn() -> bool + '_>)> = BOOKINFO_COMPONENTS
        .iter()
        .map(|(component, domain)| {
            let name = name.clone();
            let check = move || {
                tb.placements(&name).iter().any(|p| {
                    p.component == *component
                        && p.cluster_id.and_then(|id| tb.cluster_by_id(id)).is_some_and(|c| {
                            c.spec.domain == *domain && c.agent_alive() && c.runs(&name, component)
                        })
                })
            };
            (component.to_string(), Box::new(check) as Box<dyn Fn() -> bool + '_>)
        })
        .collect();
    let times = watch(limit, &checks).await;
    let placements = tb.placements(&name);
    for ((component, _), elapsed) in checks.iter().zip(times) {
        let observed = placements.iter().find(|p| &p.component == component).map(describe).unwrap_or_default();
        out.push(
            Expectation::new(format!("{name}/{component} scheduled"), "a live cluster of its domain", observed, elapsed.is_some())
                .timed(limit, elapsed),
        );
    }
    out
}

/// Submits the Bookinfo bundle under `name`, or updates its QoS if it is
/// already deployed.
async fn deploy(tb: &Testbed, name: &str, qos: QosVector) -> Expectation {
    let step = format!("deploy {name}");
    if tb.app_id(name).is_some() {
        let r = tb.control().update_qos(name, qos).await;
        return Expectation::new(step, "qos updated", format!("{r:?}"), r.is_ok());
    }
    let bundle = match bookinfo(name, qos) {
        Ok(b) => b,
        Err(e) => return Expectation::new(step, "valid bundle", e.to_string(), false),
    };
    let r = tb.control().submit(SubmitRequest { bundle }).await;
    let observed = match &r {
        Ok(ack) => format!("accepted as {} v{}", ack.app_id, ack.version),
        Err(e) => e.to_string(),
    };
    Expectation::new(step, "accepted", observed, r.is_ok())
}

/// Leaves Bookinfo running on the performance clusters, deploying or
/// moving it there first if needed.
async fn ensure_performance(tb: &Testbed) -> Vec<Expectation> {
    let on_performance = BOOKINFO_COMPONENTS
        .iter()
        .all(|(c, d)| tb.placed_on(BOOKINFO_NAME, c, tb.cluster(*d, Profile::Performance)));
    if on_performance {
        return Vec::new();
    }
    let mut out = vec![deploy(tb, BOOKINFO_NAME, PERFORMANCE).await];
    if out[0].passed {
        out.extend(expect_profile(tb, BOOKINFO_NAME, Profile::Performance, tb.spec.deadlines.migration).await);
    }
    for e in &mut out {
        e.step = format!("setup: {}", e.step);
    }
    out
}

/// Every Bookinfo component decided onto, and running on, the `profile`
/// cluster of its domain.
async fn expect_profile(tb: &Testbed, app: &str, profile: Profile, limit: Duration) -> Vec<Expectation> {
    let checks: Vec<(String, Box<dyn Fn() -> bool + '_>)> = BOOKINFO_COMPONENTS
        .iter()
        .map(|(component, domain)| {
            let target = tb.cluster(*domain, profile);
            let check = move || tb.placed_on(app, component, target) && healthy(tb, app, component);
            (component.to_string(), Box::new(check) as Box<dyn Fn() -> bool + '_>)
        })
        .collect();
    let times = watch(limit, &checks).await;
    let placements = tb.placements(app);
    BOOKINFO_COMPONENTS
        .iter()
        .zip(times)
        .map(|((component, domain), elapsed)| {
            let observed = placements.iter().find(|p| p.component == *component).map(describe).unwrap_or_default();
            Expectation::new(format!("{component} placed"), tb.cluster(*domain, profile).name(), observed, elapsed.is_some())
                .timed(limit, elapsed)
        })
        .collect()
}

fn status(tb: &Testbed, app: &str, component: &str) -> Option<ComponentStatus> {
    tb.placements(app).into_iter().find(|p| p.component == component).map(|p| p.status)
}

/// An agent has confirmed the component with a healthy heartbeat.
fn healthy(tb: &Testbed, app: &str, component: &str) -> bool {
    status(tb, app, component) == Some(ComponentStatus::Healthy)
}

fn describe(p: &crate::testbed::Placement) -> String {
    match (&p.cluster, p.status) {
        (Some(c), ComponentStatus::Healthy) => c.clone(),
        (Some(c), s) => format!("{c} ({s:?})"),
        (None, s) => format!("{s:?}"),
    }
}

/// Polls all checks until they hold together or `limit` passes. Each
/// entry is the time the check first held, `None` where it was not holding
/// at the end.
type Check<'a> = (String, Box<dyn Fn() -> bool + 'a>);

async fn watch(limit: Duration, checks: &[Check<'_>]) -> Vec<Option<Duration>> {
    let start = Instant::now();
    let mut first: Vec<Option<Duration>> = vec![None; checks.len()];
    loop {
        let now: Vec<bool> = checks.iter().map(|(_, f)| f()).collect();
        for (i, ok) in now.iter().enumerate() {
            if *ok && first[i].is_none() {
                first[i] = Some(start.elapsed());
            }
            if !*ok {
                first[i] = None;
            }
        }
        if now.iter().all(|ok| *ok) || start.elapsed() >= limit {
            return first;
        }
        tokio::time::sleep(POLL).await;
    }
}

/// Like [`wait_for`] but with the clock started at `since`.
async fn since_deadline(tb: &Testbed, since: Timestamp, limit: Duration, done: impl FnMut() -> bool) -> Option<Duration> {
    let spent = tb.now().since(since);
    let rest = limit.saturating_sub(spent);
    wait_for(rest, done).await.map(|d| d + spent)
}
