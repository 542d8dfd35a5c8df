use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::markov::{stationary_unchecked, transition_availability};
use super::types::*;
use crate::config::{EnvConfig, OverflowPolicy};
use crate::error::{Error, Result};

/// Availability and queue length of a server as reported in feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub available: bool,
    pub queue: usize,
}

/// Cumulative job accounting for the current episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCounters {
    pub dispatched: u64,
    pub completed: u64,
    pub dropped: u64,
}

/// Ground-truth environment: server chains, queues, arrivals and every
/// dispatcher's stale knowledge. Owns its random stream, so the trajectory is
/// a pure function of the seed and the action sequence.
#[derive(Debug, Clone)]
pub struct World {
    config: EnvConfig,
    slot: u64,
    servers: Vec<ServerState>,
    knowledge: Vec<KnowledgeSnapshot>,
    arrivals: Vec<bool>,
    slot_start: Vec<StatusReport>,
    next_job_id: u64,
    counters: JobCounters,
    rng: ChaCha8Rng,
}

impl World {
    /// Builds the slot-0 world using `config.seed`.
    pub fn new(config: &EnvConfig) -> Result<Self> {
        Self::with_seed(config, config.seed)
    }

    /// Builds the slot-0 world: availabilities drawn from each server's
    /// stationary distribution, empty queues, cold-start knowledge
    /// (believed available, empty, AoI 1) and slot-0 arrivals.
    pub fn with_seed(config: &EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let servers: Vec<ServerState> = (0..config.n_servers)
            .map(|k| {
                let pi = stationary_unchecked(config.stay_available[k], config.stay_unavailable[k]);
                ServerState {
                    available: rng.random::<f64>() < pi.available,
                    queue: Default::default(),
                }
            })
            .collect();
        let knowledge = vec![KnowledgeSnapshot::cold_start(config.n_servers); config.n_dispatchers];
        let mut world = Self {
            config: config.clone(),
            slot: 0,
            servers,
            knowledge,
            arrivals: vec![false; config.n_dispatchers],
            slot_start: Vec::new(),
            next_job_id: 0,
            counters: JobCounters::default(),
            rng,
        };
        world.sample_arrivals();
        world.refresh_slot_start();
        Ok(world)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn knowledge(&self) -> &[KnowledgeSnapshot] {
        &self.knowledge
    }

    /// Arrival flags for the current slot.
    pub fn arrivals(&self) -> &[bool] {
        &self.arrivals
    }

    pub fn counters(&self) -> JobCounters {
        self.counters
    }

    pub fn queued_jobs(&self) -> usize {
        self.servers.iter().map(ServerState::queue_len).sum()
    }

    /// The local observation of `dispatcher`: last-seen availability, last-seen
    /// queue length and AoI per server. Pure read.
    pub fn observe(&self, dispatcher: usize) -> &KnowledgeSnapshot {
        &self.knowledge[dispatcher]
    }

    /// Slot-start status of every server.
    pub fn slot_start(&self) -> &[StatusReport] {
        &self.slot_start
    }

    /// Test hook: overwrite a server's availability and queue.
    #[doc(hidden)]
    pub fn set_server(&mut self, server: usize, available: bool, queue: Vec<Job>) {
        self.servers[server].available = available;
        self.servers[server].queue = queue.into();
        self.next_job_id = self
            .next_job_id
            .max(self.servers[server].queue.iter().map(|j| j.id + 1).max().unwrap_or(0));
        self.refresh_slot_start();
    }

    /// Test hook: overwrite the current slot's arrival flags.
    #[doc(hidden)]
    pub fn set_arrivals(&mut self, arrivals: Vec<bool>) {
        assert_eq!(arrivals.len(), self.config.n_dispatchers);
        self.arrivals = arrivals;
    }

    /// Test hook: overwrite one knowledge entry.
    #[doc(hidden)]
    pub fn set_view(&mut self, dispatcher: usize, server: usize, view: ServerView) {
        self.knowledge[dispatcher].servers[server] = view;
    }

    /// Checks shapes, target indices, dispatch-only-on-arrival and
    /// mandatory dispatch on arrival.
    pub fn check_action(&self, action: &JointAction) -> Result<()> {
        let (n_disp, n_serv) = (self.config.n_dispatchers, self.config.n_servers);
        if action.actions.len() != n_disp {
            return Err(Error::Shape {
                expected: n_disp,
                actual: action.actions.len(),
                context: "joint action dispatchers",
            });
        }
        for (n, a) in action.actions.iter().enumerate() {
            if a.queries.len() != n_serv {
                return Err(Error::Shape {
                    expected: n_serv,
                    actual: a.queries.len(),
                    context: "query vector",
                });
            }
            match (a.dispatch, self.arrivals[n]) {
                (Some(k), true) if k < n_serv => {}
                (Some(k), true) => {
                    return Err(Error::contract(format!(
                        "dispatcher {n} targets server {k}, only {n_serv} exist"
                    )))
                }
                (Some(_), false) => {
                    return Err(Error::contract(format!(
                        "dispatcher {n} dispatches in slot {} without an arrival",
                        self.slot
                    )))
                }
                (None, true) => {
                    return Err(Error::contract(format!(
                        "dispatcher {n} must dispatch the job that arrived in slot {}",
                        self.slot
                    )))
                }
                (None, false) => {}
            }
        }
        Ok(())
    }

    /// Answers every set query bit with the slot-start status.
    pub fn process_queries(&self, action: &JointAction) -> Vec<QueryResponse> {
        let mut out = Vec::new();
        for (n, a) in action.actions.iter().enumerate() {
            for (k, _) in a.queries.iter().enumerate().filter(|(_, &q)| q) {
                let s = self.slot_start[k];
                out.push(QueryResponse {
                    dispatcher: n,
                    server: k,
                    reported_available: s.available,
                    reported_queue: s.queue,
                });
            }
        }
        out
    }

    /// Appends dispatched jobs in ascending dispatcher order, resolving
    /// overflow per the configured policy. Returns the NAKs.
    pub fn apply_dispatches(&mut self, action: &JointAction) -> Result<Vec<FeedbackEvent>> {
        if action.actions.len() != self.config.n_dispatchers {
            return Err(Error::Shape {
                expected: self.config.n_dispatchers,
                actual: action.actions.len(),
                context: "joint action dispatchers",
            });
        }
        let mut naks = Vec::new();
        for (n, a) in action.actions.iter().enumerate() {
            let Some(k) = a.dispatch else { continue };
            if !self.arrivals[n] {
                return Err(Error::contract(format!(
                    "dispatcher {n} dispatches in slot {} without an arrival",
                    self.slot
                )));
            }
            if k >= self.config.n_servers {
                return Err(Error::contract(format!(
                    "dispatcher {n} targets nonexistent server {k}"
                )));
            }
            let job = Job {
                id: self.next_job_id,
                owner: n,
                dispatch_slot: self.slot,
            };
            self.next_job_id += 1;
            self.counters.dispatched += 1;
            let report = self.slot_start[k];
            let capacity = self.config.queue_capacity[k];
            let queue = &mut self.servers[k].queue;
            let dropped = if queue.len() < capacity {
                queue.push_back(job);
                None
            } else {
                match self.config.overflow {
                    OverflowPolicy::DropOldest => {
                        let head = queue.pop_front();
                        queue.push_back(job);
                        head
                    }
                    OverflowPolicy::DropNewest => Some(job),
                }
            };
            if let Some(victim) = dropped {
                self.counters.dropped += 1;
                naks.push(FeedbackEvent {
                    dispatcher: victim.owner,
                    server: k,
                    job: victim,
                    accepted: false,
                    reported_available: report.available,
                    reported_queue: report.queue,
                });
            }
        }
        Ok(naks)
    }

    /// Every available server with a nonempty queue completes its head job.
    /// Returns the ACKs.
    pub fn serve(&mut self) -> Vec<FeedbackEvent> {
        let mut acks = Vec::new();
        for (k, server) in self.servers.iter_mut().enumerate() {
            if !server.available {
                continue;
            }
            if let Some(job) = server.queue.pop_front() {
                self.counters.completed += 1;
                let report = self.slot_start[k];
                acks.push(FeedbackEvent {
                    dispatcher: job.owner,
                    server: k,
                    job,
                    accepted: true,
                    reported_available: report.available,
                    reported_queue: report.queue,
                });
            }
        }
        acks
    }

    /// AoI bookkeeping at slot end: any query or feedback between n and k
    /// resets Δ to 1 and refreshes the stored status, queries taking
    /// precedence; everything else ages by one slot.
    pub fn update_aoi(&mut self, feedback: &[FeedbackEvent], responses: &[QueryResponse]) {
        let n_serv = self.config.n_servers;
        let mut fresh: Vec<Option<(bool, usize)>> = vec![None; self.config.n_dispatchers * n_serv];
        for ev in feedback {
            fresh[ev.dispatcher * n_serv + ev.server] = Some((ev.reported_available, ev.reported_queue));
        }
        for r in responses {
            fresh[r.dispatcher * n_serv + r.server] = Some((r.reported_available, r.reported_queue));
        }
        for (n, snapshot) in self.knowledge.iter_mut().enumerate() {
            for (k, view) in snapshot.servers.iter_mut().enumerate() {
                match fresh[n * n_serv + k] {
                    Some((available, queue)) => {
                        *view = ServerView {
                            seen_available: available,
                            seen_queue: queue,
                            aoi: 1,
                        }
                    }
                    None => view.aoi += 1,
                }
            }
        }
    }

    /// Advances one slot. Event order: queries answered, dispatches applied
    /// (overflow NAKs), service (ACKs), rewards, AoI/knowledge update,
    /// availability transitions, next-slot arrivals.
    pub fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        self.check_action(action)?;
        let responses = self.process_queries(action);
        let mut feedback = self.apply_dispatches(action)?;
        feedback.extend(self.serve());
        if self.config.report_post_service {
            for ev in &mut feedback {
                ev.reported_queue = self.servers[ev.server].queue_len();
            }
        }
        let rewards = compute_rewards(&feedback, action, &self.config);
        self.update_aoi(&feedback, &responses);
        self.transition_servers();
        self.sample_arrivals();
        let slot = self.slot;
        self.slot += 1;
        self.refresh_slot_start();
        Ok(StepOutcome {
            slot,
            rewards,
            feedback,
            responses,
            observations: self.knowledge.clone(),
            arrivals: self.arrivals.clone(),
        })
    }

    fn transition_servers(&mut self) {
        for (k, server) in self.servers.iter_mut().enumerate() {
            server.available = transition_availability(
                server.available,
                self.config.stay_available[k],
                self.config.stay_unavailable[k],
                &mut self.rng,
            );
        }
    }

    fn sample_arrivals(&mut self) {
        for (flag, &p) in self.arrivals.iter_mut().zip(&self.config.arrival_prob) {
            *flag = self.rng.random::<f64>() < p;
        }
    }

    fn refresh_slot_start(&mut self) {
        self.slot_start = self
            .servers
            .iter()
            .map(|s| StatusReport {
                available: s.available,
                queue: s.queue_len(),
            })
            .collect();
    }
}

/// r_n = (#ACKs to n) − β·(#queries by n); team reward is the sum.
pub fn compute_rewards(feedback: &[FeedbackEvent], action: &JointAction, config: &EnvConfig) -> Rewards {
    let n_disp = action.actions.len();
    let mut completions = vec![0u32; n_disp];
    let mut drops = vec![0u32; n_disp];
    for ev in feedback {
        if ev.accepted {
            completions[ev.dispatcher] += 1;
        } else {
            drops[ev.dispatcher] += 1;
        }
    }
    let queries: Vec<u32> = action.actions.iter().map(|a| a.query_count() as u32).collect();
    let per_dispatcher: Vec<f64> = completions
        .iter()
        .zip(&queries)
        .map(|(&c, &q)| c as f64 - config.query_cost * q as f64)
        .collect();
    let team = per_dispatcher.iter().sum();
    Rewards {
        per_dispatcher,
        team,
        completions,
        drops,
        queries,
    }
}
