//! Borda-count placement and the periodic scheduling pass.
//!
//! The pipeline: drop ineligible nodes, rank every attribute across all
//! remaining nodes, weight the ranks by the QoS vector, keep nodes at or
//! above the mean weight, and pick the cluster with the largest retained
//! score (total score, then cluster id, break ties).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::kb::{KbCommand, KnowledgeBase};
use crate::model::{NodeSnapshot, QosVector, ScheduleDecision, Timestamp};

/// Relative slack for the mean-threshold comparison; the weighted sums are
/// exact small integers times user weights, so only rounding in the mean
/// itself needs absorbing.
const THRESHOLD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub cluster_id: Uuid,
    pub node_name: String,
    pub energy_borda: u32,
    pub pricing_borda: u32,
    pub cpu_borda: u32,
    pub memory_borda: u32,
    pub bandwidth_borda: u32,
    pub storage_borda: u32,
    pub capacity_borda: u32,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster_id: Uuid,
    pub retained: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub chosen_cluster: Uuid,
    pub retained_nodes: Vec<String>,
    pub ranking: Vec<ClusterScore>,
}

/// Keeps ready, schedulable, unpressured nodes whose snapshot is fresh.
pub fn eligibility_filter(nodes: &[NodeSnapshot], now: Timestamp, staleness: Duration) -> Vec<NodeSnapshot> {
    nodes
        .iter()
        .filter(|n| n.ready && n.schedulable && !n.pressured && now.since(n.taken_at) <= staleness)
        .cloned()
        .collect()
}

/// Competition-style Borda points: with `n` values the best gets `n - 1`,
/// and a tie group shares the points of its first position.
pub fn borda_rank(values: &[f64], lower_wins: bool) -> Vec<u32> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    let better = |a: f64, b: f64| if lower_wins { a.total_cmp(&b) } else { b.total_cmp(&a) };
    order.sort_by(|&i, &j| better(values[i], values[j]));
    let mut scores = vec![0u32; n];
    let mut position = 0;
    while position < n {
        let value = values[order[position]];
        let mut end = position;
        while end < n && values[order[end]] == value {
            end += 1;
        }
        let points = (n - 1 - position) as u32;
        for &i in &order[position..end] {
            scores[i] = points;
        }
        position = end;
    }
    scores
}

/// Scores every node against the (zero-normalized) QoS vector.
pub fn score_nodes(eligible: &[NodeSnapshot], qos: QosVector) -> Vec<NodeScore> {
    let qos = qos.normalized();
    let column = |f: fn(&NodeSnapshot) -> f64| eligible.iter().map(f).collect::<Vec<_>>();
    let energy = borda_rank(&column(|n| n.energy), true);
    let pricing = borda_rank(&column(|n| n.pricing), true);
    let cpu = borda_rank(&column(|n| n.cpu), false);
    let memory = borda_rank(&column(|n| n.memory), false);
    let bandwidth = borda_rank(&column(|n| n.bandwidth), false);
    let storage = borda_rank(&column(|n| n.storage), false);
    eligible
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let capacity = cpu[i] + memory[i] + bandwidth[i] + storage[i];
            let w = energy[i] as f64 * qos.energy + pricing[i] as f64 * qos.pricing + capacity as f64 * qos.performance;
            NodeScore {
                cluster_id: node.cluster_id,
                node_name: node.node_name.clone(),
                energy_borda: energy[i],
                pricing_borda: pricing[i],
                cpu_borda: cpu[i],
                memory_borda: memory[i],
                bandwidth_borda: bandwidth[i],
                storage_borda: storage[i],
                capacity_borda: capacity,
                w,
            }
        })
        .collect()
}

/// Keeps nodes whose weight is at least the mean weight.
pub fn threshold_filter(scored: &[NodeScore]) -> Vec<NodeScore> {
    if scored.is_empty() {
        return Vec::new();
    }
    let mean = scored.iter().map(|s| s.w).sum::<f64>() / scored.len() as f64;
    let floor = mean - THRESHOLD_TOLERANCE * mean.abs().max(1.0);
    scored.iter().filter(|s| s.w >= floor).cloned().collect()
}

/// Sums weights per cluster and orders clusters best first.
pub fn aggregate_clusters(retained: &[NodeScore], all_scored: &[NodeScore]) -> Vec<ClusterScore> {
    let mut by_cluster: BTreeMap<Uuid, ClusterScore> = BTreeMap::new();
    for s in all_scored {
        by_cluster
            .entry(s.cluster_id)
            .or_insert(ClusterScore { cluster_id: s.cluster_id, retained: 0.0, total: 0.0 })
            .total += s.w;
    }
    for s in retained {
        if let Some(c) = by_cluster.get_mut(&s.cluster_id) {
            c.retained += s.w;
        }
    }
    let mut ranking: Vec<ClusterScore> = by_cluster.into_values().collect();
    ranking.sort_by(compare_clusters);
    ranking
}

fn compare_clusters(a: &ClusterScore, b: &ClusterScore) -> Ordering {
    b.retained
        .total_cmp(&a.retained)
        .then_with(|| b.total.total_cmp(&a.total))
        .then_with(|| a.cluster_id.to_string().cmp(&b.cluster_id.to_string()))
}

/// Runs the full pipeline over the candidate domain's nodes. `None` means
/// no node was eligible and the component stays pending.
pub fn score_and_filter_nodes(
    nodes: &[NodeSnapshot],
    qos: QosVector,
    now: Timestamp,
    staleness: Duration,
) -> Option<PlacementResult> {
    let eligible = eligibility_filter(nodes, now, staleness);
    if eligible.is_empty() {
        return None;
    }
    let scored = score_nodes(&eligible, qos);
    let retained = threshold_filter(&scored);
    let ranking = aggregate_clusters(&retained, &scored);
    let chosen = ranking.first()?.cluster_id;
    let retained_nodes = retained.iter().filter(|s| s.cluster_id == chosen).map(|s| s.node_name.clone()).collect();
    Some(PlacementResult { chosen_cluster: chosen, retained_nodes, ranking })
}

/// Placement strategy used by the scheduling pass.
pub trait Scorer: Send + Sync {
    fn place(&self, nodes: &[NodeSnapshot], qos: QosVector, now: Timestamp, staleness: Duration)
        -> Option<PlacementResult>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BordaScorer;

impl Scorer for BordaScorer {
    fn place(
        &self,
        nodes: &[NodeSnapshot],
        qos: QosVector,
        now: Timestamp,
        staleness: Duration,
    ) -> Option<PlacementResult> {
        score_and_filter_nodes(nodes, qos, now, staleness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    #[serde(with = "crate::duration_ms")]
    pub tick: Duration,
    #[serde(with = "crate::duration_ms")]
    pub grace: Duration,
    #[serde(with = "crate::duration_ms")]
    pub staleness: Duration,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { tick: Duration::from_secs(5), grace: Duration::from_secs(30), staleness: Duration::from_secs(15) }
    }
}

/// One scheduling pass: requeue stalled components, then place pending ones.
///
/// A component requeued here is still placed-looking in `kb`, so it is not
/// in the pending set and gets its new placement on the following pass.
pub fn scheduler_tick(
    kb: &KnowledgeBase,
    now: Timestamp,
    term: u64,
    config: &SchedulerConfig,
    scorer: &dyn Scorer,
) -> Vec<KbCommand> {
    let mut commands = Vec::new();
    let stalled: BTreeSet<_> = kb.stalled_components(now, config.grace).into_iter().collect();
    for c in &stalled {
        commands.push(KbCommand::RequeueComponent { app_id: c.app_id, component: c.component.clone(), at: now });
    }
    for c in kb.pending_components() {
        if stalled.contains(&c) {
            continue;
        }
        let Some(app) = kb.application(c.app_id) else { continue };
        let Some(component) = app.component(&c.component) else { continue };
        let candidates = kb.nodes_in_domain(component.domain);
        let Some(result) = scorer.place(&candidates, app.qos, now, config.staleness) else { continue };
        commands.push(KbCommand::RecordDecision {
            app_id: app.app_id,
            version: app.version,
            decision: ScheduleDecision {
                component_name: component.name.clone(),
                cluster_id: result.chosen_cluster,
                node_names: result.retained_nodes,
                decided_at: now,
                deciding_term: term,
            },
        });
    }
    commands
}
