use std::time::Duration;

use qonnect_core::params::{table, Profile};
use qonnect_core::{ComponentStatus, Domain};
use qonnect_harness::bundle::{bookinfo, BOOKINFO_COMPONENTS, BOOKINFO_NAME};
use qonnect_harness::scenario::{ENERGY, PERFORMANCE};
use qonnect_harness::testbed::wait_for;
use qonnect_harness::{run, Testbed, TestbedSpec, Verdict};

fn spec(seed: u64) -> TestbedSpec {
    TestbedSpec::default().with_seed(seed)
}

#[tokio::test(start_paused = true)]
async fn boot_registers_nine_clusters_with_table_values() {
    let tb = Testbed::boot(spec(7)).await.unwrap();
    assert!(tb.leader().is_some());
    assert!(tb.elapsed() < Duration::from_secs(60));
    tb.kb(|kb| {
        assert_eq!(kb.clusters().count(), 9);
        for c in &tb.clusters {
            let want = table(c.spec.profile);
            let nodes = kb.nodes(c.id);
            assert_eq!(nodes.len(), 2, "{}", c.name());
            for n in nodes {
                assert_eq!((n.energy, n.pricing, n.bandwidth), (want.energy, want.pricing, want.bandwidth));
            }
        }
    });
    let hosts: Vec<String> = tb.clusters.iter().filter(|c| c.rla.is_some()).map(|c| c.name()).collect();
    assert_eq!(hosts, ["cloud-performance", "cloud-energy", "cloud-cost"]);
}

#[tokio::test(start_paused = true)]
async fn four_scenarios_pass_back_to_back() {
    let (verdict, _tb) = run(spec(1), &[1, 2, 3, 4]).await.unwrap();
    for s in &verdict.scenarios {
        assert!(s.passed, "scenario {} failed:\n{}", s.scenario, qonnect_harness::report::render(&verdict));
    }
    assert!(verdict.passed);
    assert_eq!(verdict.scenarios.len(), 4);
}

#[tokio::test(start_paused = true)]
async fn ratings_requeue_waits_for_grace() {
    let (verdict, tb) = run(spec(4), &[3]).await.unwrap();
    let s3 = &verdict.scenarios[0];
    assert!(s3.passed, "{}", qonnect_harness::report::render(&verdict));
    let placed = tb.placements(BOOKINFO_NAME).into_iter().find(|p| p.component == "ratings").unwrap();
    let cluster = placed.cluster.unwrap();
    assert!(cluster == "edge-energy" || cluster == "edge-cost", "{cluster}");
    assert!(!tb.cluster(Domain::Edge, Profile::Performance).agent_alive());
}

async fn placements_after(seed: u64) -> Vec<(String, Option<String>, Vec<String>)> {
    let (verdict, tb) = run(spec(seed), &[1, 2]).await.unwrap();
    assert!(verdict.passed);
    tb.placements(BOOKINFO_NAME).into_iter().map(|p| (p.component, p.cluster, p.nodes)).collect()
}

#[test]
fn same_seed_same_placements() {
    let once = || {
        tokio::runtime::Builder::new_current_thread().enable_all().start_paused(true).build().unwrap().block_on(placements_after(11))
    };
    let a = once();
    assert_eq!(a.len(), 4);
    assert_eq!(a, once());
}

#[tokio::test(start_paused = true)]
async fn energy_qos_on_fresh_submit_lands_on_energy_clusters() {
    let tb = Testbed::boot(spec(3)).await.unwrap();
    let text = bookinfo("shop", ENERGY).unwrap();
    tb.control().submit(qonnect_core::api::SubmitRequest { bundle: text }).await.unwrap();
    let done = wait_for(Duration::from_secs(60), || {
        BOOKINFO_COMPONENTS.iter().all(|(c, d)| tb.placed_on("shop", c, tb.cluster(*d, Profile::Energy)))
    })
    .await;
    assert!(done.is_some(), "{:?}", tb.placements("shop"));
}

#[tokio::test(start_paused = true)]
async fn delete_removes_every_namespace() {
    let tb = Testbed::boot(spec(5)).await.unwrap();
    let text = bookinfo(BOOKINFO_NAME, PERFORMANCE).unwrap();
    tb.control().submit(qonnect_core::api::SubmitRequest { bundle: text }).await.unwrap();
    let placed = wait_for(Duration::from_secs(60), || {
        tb.placements(BOOKINFO_NAME).iter().all(|p| p.status == ComponentStatus::Healthy)
    })
    .await;
    assert!(placed.is_some());
    tb.control().delete_application(BOOKINFO_NAME).await.unwrap();
    let gone = wait_for(Duration::from_secs(90), || tb.clusters.iter().all(|c| !c.has_namespace(BOOKINFO_NAME))).await;
    assert!(gone.is_some());
    assert!(tb.app_id(BOOKINFO_NAME).is_none());
}

#[tokio::test(start_paused = true)]
async fn verdict_round_trips_through_disk() {
    let (verdict, tb) = run(spec(2), &[1]).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    verdict.write(dir.path(), &tb.events).unwrap();
    assert_eq!(Verdict::load(dir.path()).unwrap(), verdict);
    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert!(events.lines().count() > 10);
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.starts_with("seed 2: PASS"));
}
