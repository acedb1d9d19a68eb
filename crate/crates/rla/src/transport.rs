use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use qonnect_raft::{Envelope, NodeId};

/// Outbound half of the Raft message path. Delivery is best effort.
pub trait Transport: Send + Sync {
    fn send(&self, envelope: Envelope);
}

type Sink = Arc<dyn Fn(Envelope) + Send + Sync>;

#[derive(Default)]
struct NetworkState {
    sinks: BTreeMap<NodeId, Sink>,
    blocked: BTreeSet<(NodeId, NodeId)>,
    delivered: u64,
    dropped: u64,
}

/// In-process network between replicas sharing one runtime. Messages are
/// delivered synchronously unless the link is cut.
#[derive(Clone, Default)]
pub struct MemNetwork {
    state: Arc<Mutex<NetworkState>>,
}

impl MemNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&self, id: NodeId, sink: impl Fn(Envelope) + Send + Sync + 'static) {
        self.state.lock().sinks.insert(id, Arc::new(sink));
    }

    pub fn transport(&self, from: NodeId) -> MemTransport {
        MemTransport { network: self.clone(), from }
    }

    /// Cuts every link between different groups.
    pub fn partition(&self, groups: &[Vec<NodeId>]) {
        let mut state = self.state.lock();
        state.blocked.clear();
        for (i, a) in groups.iter().enumerate() {
            for b in groups.iter().skip(i + 1) {
                for &x in a {
                    for &y in b {
                        state.blocked.insert((x, y));
                        state.blocked.insert((y, x));
                    }
                }
            }
        }
    }

    pub fn heal(&self) {
        self.state.lock().blocked.clear();
    }

    /// `(delivered, dropped)` message counts.
    pub fn stats(&self) -> (u64, u64) {
        let state = self.state.lock();
        (state.delivered, state.dropped)
    }

    fn deliver(&self, envelope: Envelope) {
        let sink = {
            let mut state = self.state.lock();
            let link = (envelope.from, envelope.to);
            match state.sinks.get(&envelope.to).cloned() {
                Some(sink) if !state.blocked.contains(&link) => {
                    state.delivered += 1;
                    sink
                }
                _ => {
                    state.dropped += 1;
                    return;
                }
            }
        };
        sink(envelope);
    }
}

#[derive(Clone)]
pub struct MemTransport {
    network: MemNetwork,
    from: NodeId,
}

impl Transport for MemTransport {
    fn send(&self, envelope: Envelope) {
        debug_assert_eq!(envelope.from, self.from);
        self.network.deliver(envelope);
    }
}
