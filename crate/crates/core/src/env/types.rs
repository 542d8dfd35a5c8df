use serde::{Deserialize, Serialize};

/// A job in flight. Indices are zero-based throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub owner: usize,
    pub dispatch_slot: u64,
}

/// Ground truth for one server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerState {
    pub available: bool,
    /// FIFO; the head is the job in service.
    pub queue: std::collections::VecDeque<Job>,
}

impl ServerState {
    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }
}

/// One dispatcher's last-known information about one server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerView {
    pub seen_available: bool,
    pub seen_queue: usize,
    /// Slots since the information was produced; always >= 1.
    pub aoi: u64,
}

impl ServerView {
    pub const COLD_START: ServerView = ServerView {
        seen_available: true,
        seen_queue: 0,
        aoi: 1,
    };
}

/// A dispatcher's stale view of every server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnapshot {
    pub servers: Vec<ServerView>,
}

impl KnowledgeSnapshot {
    pub fn cold_start(n_servers: usize) -> Self {
        Self {
            servers: vec![ServerView::COLD_START; n_servers],
        }
    }

    pub fn len(&self) -> usize {
        self.servers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }

    /// The view a dispatcher holds within the current slot after its own
    /// query responses have come back: queried entries carry the fresh values.
    pub fn overlay(&self, responses: &[QueryResponse]) -> KnowledgeSnapshot {
        let mut out = self.clone();
        for r in responses {
            out.servers[r.server] = ServerView {
                seen_available: r.reported_available,
                seen_queue: r.reported_queue,
                aoi: 1,
            };
        }
        out
    }
}

/// ACK (`accepted = true`, job served) or NAK (`accepted = false`, job dropped
/// on overflow), with the server status payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub dispatcher: usize,
    pub server: usize,
    pub job: Job,
    pub accepted: bool,
    pub reported_available: bool,
    pub reported_queue: usize,
}

/// Answer to a paid status query; always the slot-start values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub dispatcher: usize,
    pub server: usize,
    pub reported_available: bool,
    pub reported_queue: usize,
}

/// Query bits and optional dispatch target of one dispatcher for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatcherAction {
    pub queries: Vec<bool>,
    pub dispatch: Option<usize>,
}

impl DispatcherAction {
    pub fn idle(n_servers: usize) -> Self {
        Self {
            queries: vec![false; n_servers],
            dispatch: None,
        }
    }

    pub fn query_count(&self) -> usize {
        self.queries.iter().filter(|&&q| q).count()
    }
}

/// Actions of all dispatchers for one slot, indexed by dispatcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub actions: Vec<DispatcherAction>,
}

impl JointAction {
    pub fn new(actions: Vec<DispatcherAction>) -> Self {
        Self { actions }
    }

    pub fn idle(n_dispatchers: usize, n_servers: usize) -> Self {
        Self {
            actions: vec![DispatcherAction::idle(n_servers); n_dispatchers],
        }
    }
}

/// Per-dispatcher rewards of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub per_dispatcher: Vec<f64>,
    pub team: f64,
    pub completions: Vec<u32>,
    pub drops: Vec<u32>,
    pub queries: Vec<u32>,
}

/// Everything produced by one call to [`World::step`](super::World::step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// The slot that was just simulated.
    pub slot: u64,
    pub rewards: Rewards,
    pub feedback: Vec<FeedbackEvent>,
    pub responses: Vec<QueryResponse>,
    /// Knowledge at the start of the next slot.
    pub observations: Vec<KnowledgeSnapshot>,
    /// Arrivals at the start of the next slot.
    pub arrivals: Vec<bool>,
}

impl StepOutcome {
    pub fn team_reward(&self) -> f64 {
        self.rewards.team
    }
}
