//! Straight-line reference placement used to cross-check the scorer.
//!
//! Works in integers: QoS weights are drawn as multiples of 1/4, so every
//! weighted score times 4 is an integer and the mean comparison can be done
//! without division.

use std::time::Duration;

use qonnect_core::{NodeSnapshot, QosVector, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub chosen: Uuid,
    pub retained: Vec<String>,
    /// `(cluster, retained*4, total*4)`, best first.
    pub ranking: Vec<(Uuid, i64, i64)>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub nodes: Vec<NodeSnapshot>,
    /// Weights in quarters.
    pub quarters: [i64; 3],
    pub now: Timestamp,
    pub staleness: Duration,
}

impl Instance {
    pub fn qos(&self) -> QosVector {
        QosVector::new(self.quarters[0] as f64 / 4.0, self.quarters[1] as f64 / 4.0, self.quarters[2] as f64 / 4.0)
    }
}

/// Points for `i`: `n - 1` minus the number of nodes strictly better.
fn points(values: &[f64], i: usize, lower_wins: bool) -> i64 {
    let n = values.len() as i64;
    let better = values
        .iter()
        .filter(|&&v| if lower_wins { v < values[i] } else { v > values[i] })
        .count() as i64;
    n - 1 - better
}

pub fn oracle(instance: &Instance) -> Option<OracleResult> {
    let mut eligible = Vec::new();
    for n in &instance.nodes {
        let age = instance.now.as_millis().saturating_sub(n.taken_at.as_millis());
        if n.ready && n.schedulable && !n.pressured && age as u128 <= instance.staleness.as_millis() {
            eligible.push(n.clone());
        }
    }
    if eligible.is_empty() {
        return None;
    }
    let mut q = instance.quarters;
    if q == [0, 0, 0] {
        q = [4, 4, 4];
    }
    let energy: Vec<f64> = eligible.iter().map(|n| n.energy).collect();
    let pricing: Vec<f64> = eligible.iter().map(|n| n.pricing).collect();
    let cpu: Vec<f64> = eligible.iter().map(|n| n.cpu).collect();
    let memory: Vec<f64> = eligible.iter().map(|n| n.memory).collect();
    let bandwidth: Vec<f64> = eligible.iter().map(|n| n.bandwidth).collect();
    let storage: Vec<f64> = eligible.iter().map(|n| n.storage).collect();

    let mut w = Vec::new();
    for i in 0..eligible.len() {
        let capacity = points(&cpu, i, false) + points(&memory, i, false) + points(&bandwidth, i, false) + points(&storage, i, false);
        w.push(points(&energy, i, true) * q[0] + points(&pricing, i, true) * q[1] + capacity * q[2]);
    }
    let n = w.len() as i64;
    let sum: i64 = w.iter().sum();
    let keep: Vec<bool> = w.iter().map(|&x| x * n >= sum).collect();

    let mut clusters: Vec<Uuid> = eligible.iter().map(|e| e.cluster_id).collect();
    clusters.sort();
    clusters.dedup();
    let mut ranking: Vec<(Uuid, i64, i64)> = clusters
        .iter()
        .map(|&c| {
            let mut retained = 0;
            let mut total = 0;
            for (i, e) in eligible.iter().enumerate() {
                if e.cluster_id == c {
                    total += w[i];
                    if keep[i] {
                        retained += w[i];
                    }
                }
            }
            (c, retained, total)
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.to_string().cmp(&b.0.to_string()))
    });
    let chosen = ranking[0].0;
    let retained = eligible
        .iter()
        .enumerate()
        .filter(|(i, e)| e.cluster_id == chosen && keep[*i])
        .map(|(_, e)| e.node_name.clone())
        .collect();
    Some(OracleResult { chosen, retained, ranking })
}

/// A random instance with at most 4 clusters and 12 nodes. Attribute values
/// come from small sets so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let cluster_count = rng.random_range(1..=4);
    let clusters: Vec<Uuid> = (0..cluster_count).map(|_| Uuid::from_u128(rng.random())).collect();
    let node_count = rng.random_range(1..=12);
    let now = Timestamp(100_000);
    let staleness = Duration::from_secs(15);
    let energies = [0.0024042, 0.0025689, 0.0027335, 0.001];
    let prices = [16.3884, 0.0042, 32.7726, 1.0];
    let bandwidths = [52.5, 5.0, 100.0];
    let capacities = [1.0, 4.0, 8.0, 11.0, 16.0, 98.0, 100.0];
    let ages = [0u64, 5_000, 14_999, 15_000, 15_001, 60_000];
    let nodes = (0..node_count)
        .map(|i| NodeSnapshot {
            cluster_id: clusters[rng.random_range(0..cluster_count)],
            node_name: format!("node-{i}"),
            ready: rng.random_bool(0.9),
            schedulable: rng.random_bool(0.9),
            pressured: rng.random_bool(0.1),
            energy: energies[rng.random_range(0..energies.len())],
            pricing: prices[rng.random_range(0..prices.len())],
            cpu: capacities[rng.random_range(0..capacities.len())],
            memory: capacities[rng.random_range(0..capacities.len())],
            bandwidth: bandwidths[rng.random_range(0..bandwidths.len())],
            storage: capacities[rng.random_range(0..capacities.len())],
            taken_at: Timestamp(now.as_millis() - ages[rng.random_range(0..ages.len())]),
            flagged_control_plane: false,
        })
        .collect();
    let quarters = if rng.random_bool(0.15) {
        [0, 0, 0]
    } else {
        [rng.random_range(0..=8), rng.random_range(0..=8), rng.random_range(0..=8)]
    };
    Instance { nodes, quarters, now, staleness }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Compares the scorer's output with the oracle on one instance.
pub fn agrees(instance: &Instance) -> Result<(), String> {
    let actual = qonnect_core::scheduler::score_and_filter_nodes(&instance.nodes, instance.qos(), instance.now, instance.staleness);
    let expected = oracle(instance);
    match (actual, expected) {
        (None, None) => Ok(()),
        (Some(a), Some(e)) => {
            let ranking: Vec<(Uuid, i64, i64)> = a
                .ranking
                .iter()
                .map(|c| (c.cluster_id, (c.retained * 4.0).round() as i64, (c.total * 4.0).round() as i64))
                .collect();
            let exact = a.ranking.iter().all(|c| (c.retained * 4.0).fract() == 0.0 && (c.total * 4.0).fract() == 0.0);
            if a.chosen_cluster == e.chosen && a.retained_nodes == e.retained && ranking == e.ranking && exact {
                Ok(())
            } else {
                Err(format!("scorer {a:?}\noracle {e:?}"))
            }
        }
        (a, e) => Err(format!("scorer {a:?}\noracle {e:?}")),
    }
}
