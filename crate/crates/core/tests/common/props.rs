//! Scorer properties, shared between the property tests and the acceptance run.

use std::time::Duration;

use proptest::prelude::*;
use qonnect_core::scheduler::{score_and_filter_nodes, score_nodes, threshold_filter, NodeScore};
use qonnect_core::{NodeSnapshot, QosVector, Timestamp};
use uuid::Uuid;

pub const NOW: Timestamp = Timestamp(50_000);
pub const STALENESS: Duration = Duration::from_secs(15);

pub fn node_strategy(index: usize) -> impl Strategy<Value = NodeSnapshot> {
    let energy = prop::sample::select(vec![0.0024042, 0.0025689, 0.0027335, 0.002]);
    let pricing = prop::sample::select(vec![16.3884, 0.0042, 32.7726, 3.0]);
    let capacity = prop::sample::select(vec![2.0, 4.0, 8.0, 11.0, 16.0, 98.0, 100.0]);
    let bandwidth = prop::sample::select(vec![5.0, 52.5, 100.0]);
    (
        0u128..4,
        prop::bool::weighted(0.9),
        prop::bool::weighted(0.1),
        energy,
        pricing,
        (capacity.clone(), capacity.clone(), capacity),
        bandwidth,
        prop::sample::select(vec![0u64, 10_000, 20_000]),
    )
        .prop_map(move |(cluster, ready, pressured, energy, pricing, (cpu, memory, storage), bandwidth, age)| {
            NodeSnapshot {
                cluster_id: Uuid::from_u128(cluster + 1),
                node_name: format!("n{index}"),
                ready,
                schedulable: true,
                pressured,
                energy,
                pricing,
                cpu,
                memory,
                bandwidth,
                storage,
                taken_at: Timestamp(NOW.as_millis() - age),
                flagged_control_plane: false,
            }
        })
}

pub fn nodes_strategy() -> impl Strategy<Value = Vec<NodeSnapshot>> {
    (1usize..=12).prop_flat_map(|n| (0..n).map(node_strategy).collect::<Vec<_>>())
}

pub fn qos_strategy() -> impl Strategy<Value = QosVector> {
    prop_oneof![
        1 => Just(QosVector::new(0.0, 0.0, 0.0)),
        4 => (0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0).prop_map(|(e, p, c)| QosVector::new(e, p, c)),
        2 => (0u8..3).prop_map(|i| {
            let mut q = [0.0; 3];
            q[i as usize] = 1.0;
            QosVector::new(q[0], q[1], q[2])
        }),
    ]
}

fn scores_from(ws: &[f64]) -> Vec<NodeScore> {
    ws.iter()
        .enumerate()
        .map(|(i, &w)| NodeScore {
            cluster_id: Uuid::from_u128(i as u128 % 3),
            node_name: format!("n{i}"),
            energy_borda: 0,
            pricing_borda: 0,
            cpu_borda: 0,
            memory_borda: 0,
            bandwidth_borda: 0,
            storage_borda: 0,
            capacity_borda: 0,
            w,
        })
        .collect()
}

pub fn threshold_never_empty(ws: &[f64]) -> Result<(), String> {
    let retained = threshold_filter(&scores_from(ws));
    let max = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if retained.is_empty() {
        return Err(format!("nothing retained from {ws:?}"));
    }
    if !retained.iter().any(|s| s.w == max) {
        return Err(format!("maximum {max} not retained from {ws:?}"));
    }
    Ok(())
}

pub fn zero_qos_is_uniform(nodes: &[NodeSnapshot]) -> Result<(), String> {
    let zero = score_nodes(nodes, QosVector::new(0.0, 0.0, 0.0));
    let uniform = score_nodes(nodes, QosVector::UNIFORM);
    if zero == uniform {
        Ok(())
    } else {
        Err(format!("zero {zero:?}\nuniform {uniform:?}"))
    }
}

/// Scales attribute column `column` (energy, pricing, cpu, memory,
/// bandwidth, storage) by `factor` and checks the placement is unchanged.
pub fn scaling_keeps_choice(nodes: &[NodeSnapshot], qos: QosVector, column: usize, factor: f64) -> Result<(), String> {
    let before = score_and_filter_nodes(nodes, qos, NOW, STALENESS);
    let scaled: Vec<NodeSnapshot> = nodes
        .iter()
        .cloned()
        .map(|mut n| {
            let slot = match column {
                0 => &mut n.energy,
                1 => &mut n.pricing,
                2 => &mut n.cpu,
                3 => &mut n.memory,
                4 => &mut n.bandwidth,
                _ => &mut n.storage,
            };
            *slot *= factor;
            n
        })
        .collect();
    let after = score_and_filter_nodes(&scaled, qos, NOW, STALENESS);
    let key = |r: &Option<qonnect_core::PlacementResult>| r.as_ref().map(|r| (r.chosen_cluster, r.retained_nodes.clone()));
    if key(&before) == key(&after) {
        Ok(())
    } else {
        Err(format!("column {column} x{factor}: {before:?} -> {after:?}"))
    }
}

pub fn threshold_input() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.0f64..1e6, (0u32..40).prop_map(f64::from)], 1..30)
}

pub fn scaling_input() -> impl Strategy<Value = (Vec<NodeSnapshot>, QosVector, usize, f64)> {
    (nodes_strategy(), qos_strategy(), 0usize..6, prop_oneof![1e-3f64..1.0, 1.0f64..1e3])
}
