//! Self-checks: environment invariants over random configurations, an exact
//! Markov-chain oracle for the single-server case, and gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, OverflowPolicy};
use crate::env::{DispatcherAction, JointAction, SlotRecord, StepOutcome, World};
use crate::error::Result;
use crate::eval::mix_seed;
use crate::mappo::{collect_rollout, mappo_update, EnvRunner, MappoAgent, Optimizers, TrainConfig};
use crate::nn::gradcheck::check_random_network;
use crate::policy::{BaselineController, BaselineKind, Controller};

/// Checks every per-slot invariant of one transition `before -> after`.
/// Returns a description of each violation found.
pub fn check_transition(before: &World, action: &JointAction, outcome: &StepOutcome, after: &World) -> Vec<String> {
    let cfg = before.config();
    let mut bad = Vec::new();
    let slot = outcome.slot;

    for (k, server) in after.servers().iter().enumerate() {
        if server.queue_len() > cfg.queue_capacity[k] {
            bad.push(format!(
                "slot {slot}: server {k} holds {} > {}",
                server.queue_len(),
                cfg.queue_capacity[k]
            ));
        }
    }

    let c = after.counters();
    let residual = after.queued_jobs() as u64;
    if c.dispatched != c.completed + c.dropped + residual {
        bad.push(format!(
            "slot {slot}: dispatched {} != completed {} + dropped {} + queued {residual}",
            c.dispatched, c.completed, c.dropped
        ));
    }

    let r = &outcome.rewards;
    for n in 0..cfg.n_dispatchers {
        let acks = outcome
            .feedback
            .iter()
            .filter(|e| e.dispatcher == n && e.accepted)
            .count();
        let queries = action.actions[n].query_count();
        let expect = acks as f64 - cfg.query_cost * queries as f64;
        if (r.per_dispatcher[n] - expect).abs() > 1e-12 {
            bad.push(format!(
                "slot {slot}: dispatcher {n} reward {} != {expect}",
                r.per_dispatcher[n]
            ));
        }
    }
    let sum: f64 = r.per_dispatcher.iter().sum();
    if (r.team - sum).abs() > 1e-9 {
        bad.push(format!("slot {slot}: team reward {} != sum {sum}", r.team));
    }

    for k in 0..cfg.n_servers {
        let acks = outcome.feedback.iter().filter(|e| e.server == k && e.accepted).count();
        let start = before.slot_start()[k];
        if acks > 1 || (acks == 1 && !start.available) {
            bad.push(format!(
                "slot {slot}: server {k} completed {acks} jobs (available: {})",
                start.available
            ));
        }
    }

    for n in 0..cfg.n_dispatchers {
        for k in 0..cfg.n_servers {
            let old = before.observe(n).servers[k];
            let new = after.observe(n).servers[k];
            let queried = action.actions[n].queries[k];
            let event = outcome
                .feedback
                .iter()
                .rev()
                .find(|e| e.dispatcher == n && e.server == k);
            let start = before.slot_start()[k];
            if queried {
                if new.aoi != 1 || new.seen_available != start.available || new.seen_queue != start.queue {
                    bad.push(format!(
                        "slot {slot}: query ({n},{k}) did not refresh knowledge to slot-start state"
                    ));
                }
            } else if let Some(e) = event {
                if new.aoi != 1 || new.seen_available != e.reported_available || new.seen_queue != e.reported_queue {
                    bad.push(format!("slot {slot}: feedback ({n},{k}) did not refresh knowledge"));
                }
                if !cfg.report_post_service
                    && (e.reported_available != start.available || e.reported_queue != start.queue)
                {
                    bad.push(format!(
                        "slot {slot}: feedback ({n},{k}) does not carry slot-start status"
                    ));
                }
            } else if new.aoi != old.aoi + 1
                || new.seen_available != old.seen_available
                || new.seen_queue != old.seen_queue
            {
                bad.push(format!(
                    "slot {slot}: ({n},{k}) knowledge changed without a query or feedback"
                ));
            }
        }
    }
    bad
}

/// A random valid configuration with small dimensions.
pub fn random_config<R: Rng + ?Sized>(rng: &mut R) -> EnvConfig {
    let n = rng.random_range(1..=6);
    let k = rng.random_range(1..=6);
    EnvConfig {
        n_dispatchers: n,
        n_servers: k,
        arrival_prob: (0..n).map(|_| rng.random_range(0.0..=1.0)).collect(),
        stay_available: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
        stay_unavailable: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
        queue_capacity: (0..k).map(|_| rng.random_range(1..=5)).collect(),
        query_cost: rng.random_range(0.0..0.5),
        overflow: if rng.random_bool(0.5) {
            OverflowPolicy::DropOldest
        } else {
            OverflowPolicy::DropNewest
        },
        report_post_service: rng.random_bool(0.3),
        seed: rng.random(),
        ..EnvConfig::standard()
    }
}

/// A uniformly random valid joint action for the current slot.
pub fn random_action<R: Rng + ?Sized>(world: &World, rng: &mut R) -> JointAction {
    let k = world.config().n_servers;
    let query_rate = rng.random_range(0.0..=1.0);
    JointAction::new(
        world
            .arrivals()
            .iter()
            .map(|&arrival| DispatcherAction {
                queries: (0..k).map(|_| rng.random_bool(query_rate)).collect(),
                dispatch: arrival.then(|| rng.random_range(0..k)),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub configs: usize,
    pub steps: usize,
    pub violations: Vec<String>,
    /// Configurations whose replay from the same seed and actions diverged.
    pub replay_mismatches: usize,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.replay_mismatches == 0
    }
}

/// Random actions on `configs` random configurations, `steps_per_config`
/// slots each; every transition is checked and every run is replayed.
pub fn run_invariant_suite(configs: usize, steps_per_config: usize, seed: u64) -> Result<InvariantReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = InvariantReport::default();
    for _ in 0..configs {
        let cfg = random_config(&mut rng);
        let mut world = World::new(&cfg)?;
        let mut actions = Vec::with_capacity(steps_per_config);
        let mut records = Vec::with_capacity(steps_per_config);
        for _ in 0..steps_per_config {
            let action = random_action(&world, &mut rng);
            let before = world.clone();
            let outcome = world.step(&action)?;
            let found = check_transition(&before, &action, &outcome, &world);
            if report.violations.len() < 50 {
                report.violations.extend(found);
            }
            records.push(SlotRecord::capture(&before, &action.actions, &outcome));
            actions.push(action);
            report.steps += 1;
        }
        let mut replay = World::new(&cfg)?;
        for (action, record) in actions.iter().zip(&records) {
            let before = replay.clone();
            let outcome = replay.step(action)?;
            if SlotRecord::capture(&before, &action.actions, &outcome) != *record {
                report.replay_mismatches += 1;
                break;
            }
        }
        report.configs += 1;
    }
    Ok(report)
}

/// Solves the stationary distribution of a row-stochastic matrix by
/// Gaussian elimination on πP = π, Σπ = 1.
fn stationary_of(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    // rows: (P^T - I) with the last equation replaced by normalisation
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| p[j][i] - if i == j { 1.0 } else { 0.0 }).collect();
            row.push(0.0);
            row
        })
        .collect();
    a[n - 1] = vec![1.0; n + 1];
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for j in col..=n {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
    }
    a.iter().map(|row| row[n]).collect()
}

/// Exact long-run completions per slot for one dispatcher that sends every
/// job to one server, from the stationary law of the slot-start chain
/// (availability, queue length).
pub fn single_server_throughput(stay_available: f64, stay_unavailable: f64, arrival_prob: f64, capacity: usize) -> f64 {
    let states = 2 * (capacity + 1);
    let index = |avail: bool, q: usize| usize::from(avail) * (capacity + 1) + q;
    let mut p = vec![vec![0.0; states]; states];
    let mut rate = vec![0.0; states];
    for avail in [false, true] {
        for q in 0..=capacity {
            let from = index(avail, q);
            for (arrive, pa) in [(true, arrival_prob), (false, 1.0 - arrival_prob)] {
                let mut queue = (q + usize::from(arrive)).min(capacity);
                let served = avail && queue > 0;
                if served {
                    queue -= 1;
                    rate[from] += pa;
                }
                let stay = if avail { stay_available } else { stay_unavailable };
                p[from][index(avail, queue)] += pa * stay;
                p[from][index(!avail, queue)] += pa * (1.0 - stay);
            }
        }
    }
    stationary_of(&p).iter().zip(&rate).map(|(pi, r)| pi * r).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub slots: u64,
    pub empirical: f64,
    pub exact: f64,
    /// Batch-means standard error of the empirical rate.
    pub standard_error: f64,
}

impl OracleReport {
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.exact) / self.standard_error
    }
}

/// Simulates N=K=1 under NeverQuery for `slots` slots and compares the
/// completion rate with [`single_server_throughput`].
pub fn run_markov_oracle(
    stay_available: f64,
    stay_unavailable: f64,
    arrival_prob: f64,
    capacity: usize,
    slots: u64,
    seed: u64,
) -> Result<OracleReport> {
    let cfg = EnvConfig {
        n_dispatchers: 1,
        n_servers: 1,
        arrival_prob: vec![arrival_prob],
        stay_available: vec![stay_available],
        stay_unavailable: vec![stay_unavailable],
        queue_capacity: vec![capacity],
        horizon: slots as usize,
        ..EnvConfig::standard()
    };
    let mut world = World::with_seed(&cfg, seed)?;
    let mut controller = BaselineController::new(BaselineKind::NeverQuery, mix_seed(seed, 1))?;
    let batches = 100u64;
    let per_batch = (slots / batches).max(1);
    let mut batch_rates = Vec::with_capacity(batches as usize);
    let mut total = 0u64;
    for _ in 0..batches {
        let mut done = 0u64;
        for _ in 0..per_batch {
            let action = controller.act(&world)?;
            done += world.step(&action)?.rewards.completions[0] as u64;
        }
        total += done;
        batch_rates.push(done as f64 / per_batch as f64);
    }
    let b = batch_rates.len() as f64;
    let mean = batch_rates.iter().sum::<f64>() / b;
    let var = batch_rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok(OracleReport {
        slots: per_batch * batches,
        empirical: total as f64 / (per_batch * batches) as f64,
        exact: single_server_throughput(stay_available, stay_unavailable, arrival_prob, capacity),
        standard_error: (var / b).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub networks: usize,
    pub max_relative_error: f64,
    /// Mean probability ratio on the first minibatch of a fresh update.
    pub first_epoch_ratio: f64,
}

/// Finite-difference checks on `networks` random networks plus the
/// ratio identity on one MAPPO update at the default configuration.
pub fn run_gradient_suite(networks: usize, seed: u64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..networks {
        worst = worst.max(check_random_network(&mut rng, 200)?.max_relative_error);
    }
    let env = EnvConfig::standard();
    let train = TrainConfig {
        rollout_length: 64,
        ..TrainConfig::default()
    };
    let mut agent = MappoAgent::new(&env, &train, &mut rng)?;
    let mut optimizers = Optimizers::new(&agent, &train);
    let mut runner = EnvRunner::new(&env, mix_seed(seed, 1), 0)?;
    let mut buffer = collect_rollout(&mut runner, &agent, train.rollout_length, &mut rng)?;
    buffer.compute_advantages(env.discount, train.gae_lambda)?;
    let stats = mappo_update(&mut agent, &mut optimizers, &buffer, &train, &mut rng)?;
    Ok(GradientReport {
        networks,
        max_relative_error: worst,
        first_epoch_ratio: stats.first_mean_ratio,
    })
}
