use std::time::Duration;

use qonnect_raft::sim::{NetworkConfig, SimConfig, Simulation};
use qonnect_raft::{
    Entry, Envelope, FileStorage, MemStorage, Message, RaftConfig, RaftError, RaftNode, Role, Storage,
};

fn node(id: u64, members: &[u64]) -> RaftNode<MemStorage> {
    RaftNode::new(RaftConfig::new(id, members.to_vec()).with_seed(id), MemStorage::new()).unwrap()
}

/// Drives `n` from follower to leader of a 3-node cluster by hand.
fn elect(n: &mut RaftNode<MemStorage>) {
    let out = n.tick(Duration::from_millis(301)).unwrap();
    let term = n.term();
    assert_eq!(out.messages.len(), 2);
    let out = n.step(Envelope::new(2, n.id(), term, Message::VoteResponse { granted: true })).unwrap();
    assert_eq!(n.role(), Role::Leader);
    // the leader's opening no-op goes out to both peers
    assert_eq!(out.messages.len(), 2);
}

#[test]
fn expired_timer_starts_election_at_term_two() {
    let mut n = node(1, &[1, 2, 3]);
    assert_eq!(n.term(), 1);
    let out = n.tick(Duration::from_millis(100)).unwrap();
    assert!(out.messages.is_empty());
    let out = n.tick(Duration::from_millis(201)).unwrap();
    assert_eq!(n.role(), Role::Candidate);
    assert_eq!(n.term(), 2);
    assert_eq!(n.voted_for(), Some(1));
    assert_eq!(out.messages.len(), 2);
    for env in &out.messages {
        assert_eq!(env.term, 2);
        assert!(matches!(env.message, Message::VoteRequest { last_log_index: 0, last_log_term: 0 }));
    }
    let targets: Vec<u64> = out.messages.iter().map(|e| e.to).collect();
    assert_eq!(targets, vec![2, 3]);
}

#[test]
fn one_grant_plus_self_vote_wins_three_node_election() {
    let mut n = node(1, &[1, 2, 3]);
    elect(&mut n);
    assert_eq!(n.leader_id(), Some(1));
}

#[test]
fn idle_leader_sends_empty_heartbeats() {
    let mut n = node(1, &[1, 2, 3]);
    elect(&mut n);
    let term = n.term();
    let last = n.log().last_index();
    for peer in [2, 3] {
        n.step(Envelope::new(peer, 1, term, Message::AppendResponse { success: true, match_index: last }))
            .unwrap();
    }
    let out = n.tick(Duration::from_millis(50)).unwrap();
    assert_eq!(out.messages.len(), 2);
    for env in out.messages {
        match env.message {
            Message::AppendRequest { entries, .. } => assert!(entries.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn vote_granted_at_most_once_per_term() {
    let mut n = node(3, &[1, 2, 3]);
    let out = n.step(Envelope::new(1, 3, 2, Message::VoteRequest { last_log_index: 0, last_log_term: 0 })).unwrap();
    assert!(matches!(out.messages[0].message, Message::VoteResponse { granted: true }));
    let out = n.step(Envelope::new(2, 3, 2, Message::VoteRequest { last_log_index: 0, last_log_term: 0 })).unwrap();
    assert!(matches!(out.messages[0].message, Message::VoteResponse { granted: false }));
}

#[test]
fn stale_term_requests_are_rejected_with_current_term() {
    let mut n = node(2, &[1, 2, 3]);
    n.step(Envelope::new(1, 2, 5, Message::VoteRequest { last_log_index: 0, last_log_term: 0 })).unwrap();
    let out = n
        .step(Envelope::new(
            3,
            2,
            4,
            Message::AppendRequest { prev_log_index: 0, prev_log_term: 0, entries: vec![], leader_commit: 0 },
        ))
        .unwrap();
    assert_eq!(out.messages.len(), 1);
    assert_eq!(out.messages[0].term, 5);
    assert!(matches!(out.messages[0].message, Message::AppendResponse { success: false, .. }));
}

#[test]
fn mismatched_previous_term_is_rejected_and_leader_backs_off() {
    let mut leader = node(1, &[1, 2, 3]);
    elect(&mut leader);
    for i in 0..3u8 {
        leader.propose(vec![i]).unwrap();
    }
    let term = leader.term();
    // follower 2 holds a conflicting entry at index 1 from an old term
    let mut follower = node(2, &[1, 2, 3]);
    follower
        .step(Envelope::new(
            3,
            2,
            1,
            Message::AppendRequest {
                prev_log_index: 0,
                prev_log_term: 0,
                entries: vec![Entry { index: 1, term: 1, data: b"old".to_vec() }],
                leader_commit: 0,
            },
        ))
        .unwrap();

    let probe = Envelope::new(
        1,
        2,
        term,
        Message::AppendRequest {
            prev_log_index: 1,
            prev_log_term: term,
            entries: leader.log().entries_from(2, 64),
            leader_commit: 0,
        },
    );
    let reply = follower.step(probe).unwrap().messages.remove(0);
    assert!(matches!(reply.message, Message::AppendResponse { success: false, .. }));

    let mut retry = leader.step(reply).unwrap().messages;
    assert_eq!(retry.len(), 1);
    let retry = retry.remove(0);
    match &retry.message {
        Message::AppendRequest { prev_log_index, entries, .. } => {
            assert_eq!(*prev_log_index, 0);
            assert_eq!(entries.len(), 4);
        }
        other => panic!("unexpected {other:?}"),
    }
    let ack = follower.step(retry).unwrap().messages.remove(0);
    assert!(matches!(ack.message, Message::AppendResponse { success: true, match_index: 4 }));
    assert_eq!(follower.log().entries(), leader.log().entries());
}

#[test]
fn propose_appends_at_next_index() {
    let mut n = node(1, &[1, 2, 3]);
    elect(&mut n);
    for i in 0..3u8 {
        n.propose(vec![i]).unwrap();
    }
    assert_eq!(n.log().last_index(), 4);
    let p = n.propose(b"next".to_vec()).unwrap();
    assert_eq!(p.index, 5);
    assert_eq!(p.term, n.term());
}

#[test]
fn propose_on_follower_returns_leader_hint() {
    let mut n = node(2, &[1, 2, 3]);
    n.step(Envelope::new(
        1,
        2,
        2,
        Message::AppendRequest { prev_log_index: 0, prev_log_term: 0, entries: vec![], leader_commit: 0 },
    ))
    .unwrap();
    match n.propose(b"x".to_vec()) {
        Err(RaftError::NotLeader { leader_hint }) => assert_eq!(leader_hint, Some(1)),
        other => panic!("expected NotLeader, got {other:?}"),
    }
}

#[test]
fn hundred_proposals_apply_in_same_order_everywhere() {
    let mut sim = Simulation::new(SimConfig::new(3, 3)).unwrap();
    assert!(sim.run_until(Duration::from_secs(3), |s| s.leader().is_some()));
    let mut expected = Vec::new();
    for i in 0..100u32 {
        let data = format!("cmd-{i}").into_bytes();
        sim.propose(data.clone()).expect("stable leader");
        expected.push(data);
        if i % 7 == 0 {
            sim.run_for(Duration::from_millis(20));
        }
    }
    assert!(sim.run_until(Duration::from_secs(3), |s| s.members().iter().all(|&id| s.applied(id).commands.len() == 100)));
    for id in sim.members() {
        assert_eq!(sim.applied(id).data(), expected, "node {id}");
    }
    assert!(sim.checker().violations().is_empty());
}

#[test]
fn minority_suffix_is_overwritten_after_heal() {
    let mut sim = Simulation::new(SimConfig::new(5, 21)).unwrap();
    assert!(sim.run_until(Duration::from_secs(3), |s| s.leader().is_some()));
    let old = sim.leader().unwrap();
    sim.propose(b"committed".to_vec());
    sim.run_for(Duration::from_millis(200));

    let others: Vec<u64> = sim.members().into_iter().filter(|&m| m != old).collect();
    let buddy = others[0];
    sim.partition(vec![vec![old, buddy], others[1..].to_vec()]);
    for i in 0..5u8 {
        sim.propose_to(old, vec![b'x', i]).unwrap();
    }
    sim.run_for(Duration::from_millis(100));
    assert!(sim.node(old).unwrap().log().last_index() > sim.node(others[1]).unwrap().log().last_index());

    assert!(sim.run_until(Duration::from_secs(5), |s| s
        .leader()
        .is_some_and(|l| l != old && s.node(l).unwrap().term() > s.node(old).unwrap().term())));
    for i in 0..3u8 {
        sim.propose(vec![b'y', i]);
    }
    sim.run_for(Duration::from_millis(300));
    sim.heal();
    let members = sim.members();
    assert!(sim.run_until(Duration::from_secs(5), |s| {
        let reference = s.node(members[0]).unwrap().log().entries().to_vec();
        members.iter().all(|&m| s.node(m).unwrap().log().entries() == reference.as_slice())
            && members.iter().all(|&m| s.node(m).unwrap().commit_index() == s.node(members[0]).unwrap().log().last_index())
    }));
    let encoded: Vec<Vec<u8>> =
        members.iter().map(|&m| serde_json::to_vec(sim.node(m).unwrap().log().entries()).unwrap()).collect();
    assert!(encoded.windows(2).all(|w| w[0] == w[1]));
    for &m in &members {
        let applied = sim.applied(m).data();
        assert!(!applied.iter().any(|d| d.first() == Some(&b'x')), "minority writes were never committed");
        assert_eq!(applied.iter().filter(|d| d.first() == Some(&b'y')).count(), 3);
    }
    assert!(sim.checker().violations().is_empty());
    assert!(sim.log_matching_violations().is_empty());
}

#[test]
fn compaction_moves_log_base_and_survives_restart() {
    let mut sim = Simulation::new(SimConfig::new(3, 5)).unwrap();
    assert!(sim.run_until(Duration::from_secs(3), |s| s.leader().is_some()));
    let leader = sim.leader().unwrap();
    for i in 0..60u32 {
        sim.propose(i.to_be_bytes().to_vec());
    }
    assert!(sim.run_until(Duration::from_secs(3), |s| s.members().iter().all(|&m| s.applied(m).commands.len() == 60)));
    let follower = sim.members().into_iter().find(|&m| m != leader).unwrap();

    // compact exactly at applied index 50 on a hand-built node mirror
    let applied_index = sim.applied(follower).commands[49].0;
    let before = sim.applied(follower).clone();
    sim.compact(follower).unwrap();
    let base = sim.node(follower).unwrap().log().snapshot_index();
    assert_eq!(base, before.last_index);
    assert_eq!(sim.node(follower).unwrap().log().first_index(), base + 1);
    assert!(applied_index < base + 1);

    sim.stop(follower);
    sim.restart(follower).unwrap();
    assert_eq!(sim.applied(follower), &before);
    assert!(sim.checker().violations().is_empty());
}

#[test]
fn compact_at_fifty_starts_log_at_fifty_one() {
    let mut n = RaftNode::new(RaftConfig::new(1, [1]), MemStorage::new()).unwrap();
    n.tick(Duration::from_millis(301)).unwrap();
    assert_eq!(n.role(), Role::Leader);
    for i in 0..60u32 {
        n.propose(i.to_be_bytes().to_vec()).unwrap();
    }
    // drain commits
    n.tick(Duration::from_millis(1)).unwrap();
    assert!(n.last_applied() >= 50);
    let meta = n.compact(50, b"state@50".to_vec()).unwrap();
    assert_eq!(meta.last_index, 50);
    assert_eq!(n.log().first_index(), 51);
    let restored = RaftNode::new(RaftConfig::new(1, [1]), n.storage().clone()).unwrap();
    assert_eq!(restored.snapshot().unwrap().data, b"state@50");
    assert_eq!(restored.log().first_index(), 51);
    assert_eq!(restored.log().last_index(), n.log().last_index());
}

#[test]
fn compact_beyond_applied_is_rejected() {
    let mut n = node(1, &[1, 2, 3]);
    elect(&mut n);
    n.propose(b"a".to_vec()).unwrap();
    let err = n.compact(n.log().last_index(), vec![]).unwrap_err();
    assert!(matches!(err, RaftError::CompactBeyondApplied { .. }));
}

#[test]
fn lagging_follower_receives_snapshot_then_appends() {
    let mut sim = Simulation::new(SimConfig::new(3, 9).with_snapshot_threshold(20)).unwrap();
    assert!(sim.run_until(Duration::from_secs(3), |s| s.leader().is_some()));
    let leader = sim.leader().unwrap();
    let lagger = sim.members().into_iter().find(|&m| m != leader).unwrap();
    sim.stop(lagger);
    for i in 0..80u32 {
        sim.propose(i.to_be_bytes().to_vec());
        sim.run_for(Duration::from_millis(10));
    }
    sim.run_for(Duration::from_millis(300));
    assert!(sim.node(leader).unwrap().log().snapshot_index() > 1, "leader compacted");

    sim.restart(lagger).unwrap();
    assert!(sim.run_until(Duration::from_secs(5), |s| s.applied(lagger).commands.len() == 80));
    // appends resume after the install
    sim.propose(b"after".to_vec());
    assert!(sim.run_until(Duration::from_secs(2), |s| s.applied(lagger).commands.len() == 81));
    assert_eq!(sim.applied(lagger).data(), sim.applied(leader).data());
    assert!(sim.checker().violations().is_empty());
}

#[test]
fn five_node_cluster_recovers_from_leader_loss_across_seeds() {
    let mut recovered = 0;
    for seed in 0..100 {
        let mut sim = Simulation::new(SimConfig::new(5, seed)).unwrap();
        assert!(sim.run_until(Duration::from_secs(5), |s| s.leader().is_some()));
        let old = sim.leader().unwrap();
        sim.stop(old);
        // 200 ticks of 10 ms
        if sim.run_until(Duration::from_secs(2), |s| s.leader().is_some_and(|l| l != old)) {
            recovered += 1;
        }
        assert!(sim.checker().violations().is_empty());
    }
    assert!(recovered >= 99, "recovered in {recovered}/100 seeds");
}

#[test]
fn file_backed_node_resumes_term_vote_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let (term, vote, entries) = {
        let storage = FileStorage::open(dir.path()).unwrap().without_fsync();
        let mut n = RaftNode::new(RaftConfig::new(1, [1, 2, 3]), storage).unwrap();
        elect_file(&mut n);
        for i in 0..5u8 {
            n.propose(vec![i]).unwrap();
        }
        (n.term(), n.voted_for(), n.log().entries().to_vec())
    };
    let storage = FileStorage::open(dir.path()).unwrap();
    let n = RaftNode::new(RaftConfig::new(1, [1, 2, 3]), storage).unwrap();
    assert_eq!(n.term(), term);
    assert_eq!(n.voted_for(), vote);
    assert_eq!(n.log().entries(), entries.as_slice());
    assert_eq!(n.role(), Role::Follower);
}

fn elect_file<S: Storage>(n: &mut RaftNode<S>) {
    n.tick(Duration::from_millis(301)).unwrap();
    let term = n.term();
    n.step(Envelope::new(2, n.id(), term, Message::VoteResponse { granted: true })).unwrap();
    assert_eq!(n.role(), Role::Leader);
}

#[test]
fn lossy_network_still_commits() {
    let net = NetworkConfig { drop_rate: 0.2, min_delay: Duration::from_millis(1), max_delay: Duration::from_millis(30) };
    let mut sim = Simulation::new(SimConfig::new(3, 99).with_network(net)).unwrap();
    let mut proposed = 0;
    for i in 0..40u32 {
        sim.run_for(Duration::from_millis(50));
        if sim.propose(i.to_be_bytes().to_vec()).is_some() {
            proposed += 1;
        }
    }
    sim.set_drop_rate(0.0);
    sim.run_for(Duration::from_secs(3));
    let lens: Vec<usize> = sim.members().iter().map(|&m| sim.applied(m).commands.len()).collect();
    assert!(lens.windows(2).all(|w| w[0] == w[1]), "{lens:?}");
    assert!(lens[0] > 0 && lens[0] <= proposed);
    assert!(sim.checker().violations().is_empty());
    assert!(sim.log_matching_violations().is_empty());
}
