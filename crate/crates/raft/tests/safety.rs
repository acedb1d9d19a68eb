use qonnect_raft::sim::{chaos_run, stop_tolerance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_fault_schedules_preserve_safety(seed in any::<u64>(), five in any::<bool>()) {
        let nodes = if five { 5 } else { 3 };
        let report = chaos_run(nodes, seed);
        prop_assert!(report.violations.is_empty(), "{:?}", report.violations);
    }
}

#[test]
fn chaos_runs_make_progress() {
    let mut committed = 0;
    for seed in 0..10 {
        let report = chaos_run(3, seed);
        assert!(report.violations.is_empty(), "seed {seed}: {:?}", report.violations);
        committed += report.committed;
    }
    assert!(committed > 0);
}

#[test]
fn survives_minority_stops() {
    for n in [3, 5] {
        for seed in 0..10 {
            stop_tolerance(n, seed).unwrap_or_else(|e| panic!("n={n} seed={seed}: {e}"));
        }
    }
}

#[test]
fn chaos_schedule_exercises_elections() {
    let reports: Vec<_> = (0..5).map(|s| chaos_run(5, s)).collect();
    assert!(reports.iter().any(|r| r.terms > 1));
}
