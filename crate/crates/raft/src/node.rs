use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RaftConfig;
use crate::error::{RaftError, Result};
use crate::log::RaftLog;
use crate::message::{Entry, Envelope, Message, Snapshot};
use crate::storage::{HardState, Storage};
use crate::{LogIndex, NodeId, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

/// Point-in-time view of a node's consensus state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaftNodeState {
    pub node_id: NodeId,
    pub role: Role,
    pub current_term: Term,
    pub voted_for: Option<NodeId>,
    pub leader_id: Option<NodeId>,
    pub commit_index: LogIndex,
    pub last_applied: LogIndex,
    pub last_index: LogIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub last_index: LogIndex,
    pub last_term: Term,
}

/// Work produced by one call into the node.
///
/// The owner must restore `restore` (if any) before applying `committed`,
/// and should deliver `messages` after both.
#[derive(Debug, Default)]
pub struct Output {
    pub messages: Vec<Envelope>,
    pub restore: Option<Snapshot>,
    pub committed: Vec<Entry>,
}

impl Output {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty() && self.restore.is_none() && self.committed.is_empty()
    }
}

#[derive(Debug)]
pub struct Proposal {
    pub index: LogIndex,
    pub term: Term,
    pub output: Output,
}

#[derive(Debug, Clone, Copy)]
struct Progress {
    next: LogIndex,
    matched: LogIndex,
}

/// One Raft member. All methods are synchronous state transitions; the
/// caller serializes access and moves messages between nodes.
#[derive(Debug)]
pub struct RaftNode<S: Storage> {
    config: RaftConfig,
    storage: S,
    rng: ChaCha8Rng,

    term: Term,
    voted_for: Option<NodeId>,
    log: RaftLog,
    snapshot: Option<Snapshot>,

    role: Role,
    leader_id: Option<NodeId>,
    commit_index: LogIndex,
    last_applied: LogIndex,
    /// First index appended in the current leadership term.
    term_start_index: LogIndex,

    election_elapsed: Duration,
    election_timeout: Duration,
    heartbeat_elapsed: Duration,

    votes: BTreeSet<NodeId>,
    progress: BTreeMap<NodeId, Progress>,

    out: Output,
}

impl<S: Storage> RaftNode<S> {
    /// Builds a node from whatever `storage` holds. An empty storage starts a
    /// fresh member at term 1.
    ///
    /// A restored snapshot is surfaced through [`RaftNode::snapshot`]; the
    /// owner loads it into its state machine before applying anything else.
    pub fn new(config: RaftConfig, mut storage: S) -> Result<Self> {
        config.validate()?;
        let state = storage.load()?;
        let fresh = state.is_empty();
        let (snap_index, snap_term) = state.snapshot.as_ref().map_or((0, 0), |s| (s.last_index, s.last_term));
        let mut node = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            term: state.hard_state.term,
            voted_for: state.hard_state.voted_for,
            log: RaftLog::new(snap_index, snap_term, state.entries),
            snapshot: state.snapshot,
            role: Role::Follower,
            leader_id: None,
            commit_index: snap_index,
            last_applied: snap_index,
            term_start_index: 0,
            election_elapsed: Duration::ZERO,
            election_timeout: Duration::ZERO,
            heartbeat_elapsed: Duration::ZERO,
            votes: BTreeSet::new(),
            progress: BTreeMap::new(),
            out: Output::default(),
            config,
            storage,
        };
        if fresh {
            node.term = 1;
            node.persist_hard_state()?;
        }
        node.reset_election_timer();
        Ok(node)
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    pub fn config(&self) -> &RaftConfig {
        &self.config
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn term(&self) -> Term {
        self.term
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn leader_id(&self) -> Option<NodeId> {
        self.leader_id
    }

    pub fn commit_index(&self) -> LogIndex {
        self.commit_index
    }

    pub fn last_applied(&self) -> LogIndex {
        self.last_applied
    }

    pub fn log(&self) -> &RaftLog {
        &self.log
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    pub fn storage(&self) -> &S {
        &self.storage
    }

    pub fn state(&self) -> RaftNodeState {
        RaftNodeState {
            node_id: self.config.id,
            role: self.role,
            current_term: self.term,
            voted_for: self.voted_for,
            leader_id: self.leader_id,
            commit_index: self.commit_index,
            last_applied: self.last_applied,
            last_index: self.log.last_index(),
        }
    }

    /// Leader whose own-term entries have committed and been handed out, so
    /// its applied state reflects every earlier committed write.
    pub fn is_ready_leader(&self) -> bool {
        self.role == Role::Leader && self.commit_index >= self.term_start_index && self.last_applied == self.commit_index
    }

    pub fn should_compact(&self) -> bool {
        self.last_applied.saturating_sub(self.log.snapshot_index()) >= self.config.snapshot_threshold
    }

    /// Advances timers by `elapsed`.
    pub fn tick(&mut self, elapsed: Duration) -> Result<Output> {
        match self.role {
            Role::Leader => {
                self.heartbeat_elapsed += elapsed;
                if self.heartbeat_elapsed >= self.config.heartbeat_interval {
                    self.heartbeat_elapsed = Duration::ZERO;
                    self.broadcast_append();
                }
            }
            Role::Follower | Role::Candidate => {
                self.election_elapsed += elapsed;
                if self.election_elapsed >= self.election_timeout {
                    self.start_election()?;
                }
            }
        }
        Ok(self.take_output())
    }

    /// Handles one inbound message.
    pub fn step(&mut self, env: Envelope) -> Result<Output> {
        if env.to != self.config.id || env.from == self.config.id || !self.config.members.contains(&env.from) {
            return Ok(Output::default());
        }
        if env.term > self.term {
            let leader = match env.message {
                Message::AppendRequest { .. } | Message::SnapshotRequest { .. } => Some(env.from),
                _ => None,
            };
            self.become_follower(env.term, leader)?;
        } else if env.term < self.term {
            self.reject_stale(&env);
            return Ok(self.take_output());
        }

        let from = env.from;
        match env.message {
            Message::VoteRequest { last_log_index, last_log_term } => {
                self.handle_vote_request(from, last_log_index, last_log_term)?
            }
            Message::VoteResponse { granted } => self.handle_vote_response(from, granted)?,
            Message::AppendRequest { prev_log_index, prev_log_term, entries, leader_commit } => {
                self.handle_append(from, prev_log_index, prev_log_term, entries, leader_commit)?
            }
            Message::AppendResponse { success, match_index } => {
                self.handle_append_response(from, success, match_index)
            }
            Message::SnapshotRequest { snapshot } => self.handle_snapshot(from, snapshot)?,
            Message::SnapshotResponse { last_index } => self.handle_snapshot_response(from, last_index),
        }
        Ok(self.take_output())
    }

    /// Appends `data` to the leader's log and starts replicating it.
    pub fn propose(&mut self, data: Vec<u8>) -> Result<Proposal> {
        if self.role != Role::Leader {
            return Err(RaftError::NotLeader { leader_hint: self.leader_id });
        }
        let index = self.append_local(data)?;
        let peers: Vec<NodeId> = self.config.peers().collect();
        for peer in peers {
            if self.progress[&peer].next == index {
                self.send_append(peer);
            }
        }
        self.maybe_commit();
        Ok(Proposal { index, term: self.term, output: self.take_output() })
    }

    /// Replaces the log prefix up to `upto` with `state`, which must be the
    /// application state after applying exactly that prefix.
    pub fn compact(&mut self, upto: LogIndex, state: Vec<u8>) -> Result<SnapshotMeta> {
        if upto > self.last_applied {
            return Err(RaftError::CompactBeyondApplied { requested: upto, last_applied: self.last_applied });
        }
        if upto <= self.log.snapshot_index() {
            let meta = SnapshotMeta { last_index: self.log.snapshot_index(), last_term: self.log.snapshot_term() };
            return Ok(meta);
        }
        let term = self.log.term_at(upto).expect("applied entry is in the log");
        let snapshot = Snapshot { last_index: upto, last_term: term, data: state };
        self.log.compact_to(upto, term);
        self.storage.save_snapshot(&snapshot, self.log.entries())?;
        self.snapshot = Some(snapshot);
        Ok(SnapshotMeta { last_index: upto, last_term: term })
    }

    fn take_output(&mut self) -> Output {
        self.collect_committed();
        std::mem::take(&mut self.out)
    }

    fn send(&mut self, to: NodeId, message: Message) {
        self.out.messages.push(Envelope::new(self.config.id, to, self.term, message));
    }

    fn persist_hard_state(&mut self) -> Result<()> {
        self.storage.save_hard_state(&HardState { term: self.term, voted_for: self.voted_for })?;
        Ok(())
    }

    fn reset_election_timer(&mut self) {
        let min = self.config.election_timeout_min.as_micros() as u64;
        let max = self.config.election_timeout_max.as_micros() as u64;
        self.election_timeout = Duration::from_micros(self.rng.random_range(min..=max));
        self.election_elapsed = Duration::ZERO;
    }

    fn become_follower(&mut self, term: Term, leader: Option<NodeId>) -> Result<()> {
        if term > self.term {
            self.term = term;
            self.voted_for = None;
            self.persist_hard_state()?;
        }
        self.role = Role::Follower;
        self.leader_id = leader;
        self.votes.clear();
        self.progress.clear();
        self.reset_election_timer();
        Ok(())
    }

    fn start_election(&mut self) -> Result<()> {
        self.role = Role::Candidate;
        self.term += 1;
        self.voted_for = Some(self.config.id);
        self.persist_hard_state()?;
        self.leader_id = None;
        self.votes.clear();
        self.votes.insert(self.config.id);
        self.reset_election_timer();
        if self.votes.len() >= self.config.quorum() {
            return self.become_leader();
        }
        let (last_log_index, last_log_term) = (self.log.last_index(), self.log.last_term());
        let peers: Vec<NodeId> = self.config.peers().collect();
        for peer in peers {
            self.send(peer, Message::VoteRequest { last_log_index, last_log_term });
        }
        Ok(())
    }

    fn become_leader(&mut self) -> Result<()> {
        self.role = Role::Leader;
        self.leader_id = Some(self.config.id);
        self.votes.clear();
        self.heartbeat_elapsed = Duration::ZERO;
        let next = self.log.last_index() + 1;
        self.progress = self.config.peers().map(|p| (p, Progress { next, matched: 0 })).collect();
        // Entries from earlier terms only commit once an own-term entry does.
        self.term_start_index = self.append_local(Vec::new())?;
        self.broadcast_append();
        self.maybe_commit();
        Ok(())
    }

    fn append_local(&mut self, data: Vec<u8>) -> Result<LogIndex> {
        let entry = Entry { index: self.log.last_index() + 1, term: self.term, data };
        self.storage.append(std::slice::from_ref(&entry))?;
        let index = entry.index;
        self.log.append(entry);
        Ok(index)
    }

    fn broadcast_append(&mut self) {
        let peers: Vec<NodeId> = self.config.peers().collect();
        for peer in peers {
            self.send_append(peer);
        }
    }

    fn send_append(&mut self, peer: NodeId) {
        let next = self.progress[&peer].next;
        if next <= self.log.snapshot_index() {
            if let Some(snapshot) = self.snapshot.clone() {
                self.send(peer, Message::SnapshotRequest { snapshot });
                return;
            }
        }
        let prev_log_index = next - 1;
        let prev_log_term = self.log.term_at(prev_log_index).unwrap_or(0);
        let entries = self.log.entries_from(next, self.config.max_append_entries);
        self.send(
            peer,
            Message::AppendRequest { prev_log_index, prev_log_term, entries, leader_commit: self.commit_index },
        );
    }

    fn reject_stale(&mut self, env: &Envelope) {
        match env.message {
            Message::VoteRequest { .. } => self.send(env.from, Message::VoteResponse { granted: false }),
            Message::AppendRequest { .. } => {
                self.send(env.from, Message::AppendResponse { success: false, match_index: 0 })
            }
            Message::SnapshotRequest { .. } => self.send(env.from, Message::SnapshotResponse { last_index: 0 }),
            _ => {}
        }
    }

    fn handle_vote_request(&mut self, from: NodeId, last_log_index: LogIndex, last_log_term: Term) -> Result<()> {
        let up_to_date = last_log_term > self.log.last_term()
            || (last_log_term == self.log.last_term() && last_log_index >= self.log.last_index());
        let free = self.voted_for.is_none() || self.voted_for == Some(from);
        let granted = self.role == Role::Follower && free && up_to_date;
        if granted {
            self.voted_for = Some(from);
            self.persist_hard_state()?;
            self.reset_election_timer();
        }
        self.send(from, Message::VoteResponse { granted });
        Ok(())
    }

    fn handle_vote_response(&mut self, from: NodeId, granted: bool) -> Result<()> {
        if self.role != Role::Candidate || !granted {
            return Ok(());
        }
        self.votes.insert(from);
        if self.votes.len() >= self.config.quorum() {
            self.become_leader()?;
        }
        Ok(())
    }

    fn handle_append(
        &mut self,
        from: NodeId,
        mut prev_log_index: LogIndex,
        mut prev_log_term: Term,
        mut entries: Vec<Entry>,
        leader_commit: LogIndex,
    ) -> Result<()> {
        if self.role == Role::Leader {
            // Two leaders in one term cannot happen; drop rather than corrupt.
            return Ok(());
        }
        self.role = Role::Follower;
        self.leader_id = Some(from);
        self.votes.clear();
        self.reset_election_timer();

        // Anything at or below our snapshot is committed and therefore matches.
        let base = self.log.snapshot_index();
        if prev_log_index < base {
            entries.retain(|e| e.index > base);
            prev_log_index = base;
            prev_log_term = self.log.snapshot_term();
        }

        if self.log.term_at(prev_log_index) != Some(prev_log_term) {
            let hint = if prev_log_index > self.log.last_index() {
                self.log.last_index()
            } else {
                prev_log_index.saturating_sub(1)
            };
            self.send(from, Message::AppendResponse { success: false, match_index: hint });
            return Ok(());
        }

        let last_new = prev_log_index + entries.len() as u64;
        let mut divergent = None;
        for (i, entry) in entries.iter().enumerate() {
            match self.log.term_at(entry.index) {
                Some(term) if term == entry.term => continue,
                Some(_) => {
                    debug_assert!(entry.index > self.commit_index, "committed entry overwritten");
                    self.storage.truncate_from(entry.index)?;
                    self.log.truncate_from(entry.index);
                    divergent = Some(i);
                    break;
                }
                None => {
                    divergent = Some(i);
                    break;
                }
            }
        }
        if let Some(i) = divergent {
            let fresh = entries.split_off(i);
            self.storage.append(&fresh)?;
            for entry in fresh {
                self.log.append(entry);
            }
        }
        if leader_commit > self.commit_index {
            self.commit_index = leader_commit.min(last_new).max(self.commit_index);
        }
        self.send(from, Message::AppendResponse { success: true, match_index: last_new });
        Ok(())
    }

    fn handle_append_response(&mut self, from: NodeId, success: bool, match_index: LogIndex) {
        if self.role != Role::Leader {
            return;
        }
        let last_index = self.log.last_index();
        let Some(pr) = self.progress.get_mut(&from) else { return };
        if success {
            pr.matched = pr.matched.max(match_index.min(last_index));
            pr.next = pr.matched + 1;
            let behind = pr.next <= last_index;
            self.maybe_commit();
            if behind {
                self.send_append(from);
            }
        } else {
            let retry = pr.next.saturating_sub(1).min(match_index + 1).max(pr.matched + 1).max(1);
            pr.next = retry;
            self.send_append(from);
        }
    }

    fn handle_snapshot(&mut self, from: NodeId, snapshot: Snapshot) -> Result<()> {
        self.role = Role::Follower;
        self.leader_id = Some(from);
        self.votes.clear();
        self.reset_election_timer();

        if snapshot.last_index <= self.commit_index {
            self.send(from, Message::SnapshotResponse { last_index: self.commit_index });
            return Ok(());
        }
        if self.log.term_at(snapshot.last_index) == Some(snapshot.last_term) {
            self.log.compact_to(snapshot.last_index, snapshot.last_term);
        } else {
            self.log.reset(snapshot.last_index, snapshot.last_term);
        }
        self.storage.save_snapshot(&snapshot, self.log.entries())?;
        let last_index = snapshot.last_index;
        self.commit_index = last_index;
        self.last_applied = last_index;
        self.out.restore = Some(snapshot.clone());
        self.out.committed.clear();
        self.snapshot = Some(snapshot);
        self.send(from, Message::SnapshotResponse { last_index });
        Ok(())
    }

    fn handle_snapshot_response(&mut self, from: NodeId, last_index: LogIndex) {
        if self.role != Role::Leader {
            return;
        }
        let log_last = self.log.last_index();
        let Some(pr) = self.progress.get_mut(&from) else { return };
        pr.matched = pr.matched.max(last_index.min(log_last));
        pr.next = pr.matched + 1;
        let behind = pr.next <= log_last;
        self.maybe_commit();
        if behind {
            self.send_append(from);
        }
    }

    fn maybe_commit(&mut self) {
        if self.role != Role::Leader {
            return;
        }
        let quorum = self.config.quorum();
        let mut candidate = self.log.last_index();
        while candidate > self.commit_index {
            if self.log.term_at(candidate) == Some(self.term) {
                let replicas = 1 + self.progress.values().filter(|p| p.matched >= candidate).count();
                if replicas >= quorum {
                    self.commit_index = candidate;
                    return;
                }
            } else {
                // Earlier entries are from older terms; they ride along later.
                return;
            }
            candidate -= 1;
        }
    }

    fn collect_committed(&mut self) {
        while self.last_applied < self.commit_index {
            self.last_applied += 1;
            let entry = self.log.entry(self.last_applied).expect("committed entry present").clone();
            self.out.committed.push(entry);
        }
    }
}
