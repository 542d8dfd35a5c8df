//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use aoi_dispatch::env::World;
use aoi_dispatch::eval::{mix_seed, run_episodes, Metrics};
use aoi_dispatch::experiment::{
    aggregate, default_config, emit_report, run_sweep, ReportFormat, ResultRow, SweepParameter, SweepSpec,
    ACCOUNTING_TOLERANCE,
};
use aoi_dispatch::mappo::{
    collect_rollout, evaluate, ActionMode, EnvRunner, MappoAgent, MappoController, TrainConfig, Trainer,
};
use aoi_dispatch::policy::{BaselineController, BaselineKind, Controller, PolicySpec};
use aoi_dispatch::validation::{run_gradient_suite, run_invariant_suite, run_markov_oracle};
use aoi_dispatch::{EnvConfig, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

fn main() -> ExitCode {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "environment invariants",
            budget: Duration::from_secs(60),
            run: invariants,
        },
        Criterion {
            id: 2,
            name: "Markov-chain throughput oracle",
            budget: Duration::from_secs(30),
            run: markov_oracle,
        },
        Criterion {
            id: 3,
            name: "gradient and ratio oracle",
            budget: Duration::from_secs(30),
            run: gradient_oracle,
        },
        Criterion {
            id: 4,
            name: "learning sanity",
            budget: Duration::from_secs(300),
            run: learning_sanity,
        },
        Criterion {
            id: 5,
            name: "query-cost ordering",
            budget: Duration::from_secs(120),
            run: cost_ordering,
        },
        Criterion {
            id: 6,
            name: "MAPPO dominance",
            budget: Duration::from_secs(1800),
            run: mappo_dominance,
        },
        Criterion {
            id: 7,
            name: "low-load regime",
            budget: Duration::from_secs(900),
            run: low_load,
        },
        Criterion {
            id: 8,
            name: "accounting identity",
            budget: Duration::from_secs(120),
            run: accounting,
        },
    ];
    let mut all = true;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let passed = outcome.passed && in_budget;
        all &= passed;
        println!(
            "{} criterion {} ({}): {} [{:.1}s of {}s budget{}]",
            if passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            outcome.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_budget { "" } else { ", over budget" },
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn invariants() -> Result<Outcome> {
    let report = run_invariant_suite(50, 2000, 2024)?;
    let detail = format!(
        "{} configs, {} steps, {} violations, {} replay mismatches",
        report.configs,
        report.steps,
        report.violations.len(),
        report.replay_mismatches
    );
    Ok(Outcome::new(report.passed() && report.steps >= 100_000, detail))
}

/// Stationary completion rate of one server with queue capacity `cap`,
/// by power iteration over (availability, queue) at slot start.
fn power_iteration_throughput(phi: f64, psi: f64, lam: f64, cap: usize) -> f64 {
    let n = 2 * (cap + 1);
    let idx = |x: usize, q: usize| x * (cap + 1) + q;
    let mut pi = vec![1.0 / n as f64; n];
    let mut rate = 0.0;
    for _ in 0..20_000 {
        let mut next = vec![0.0; n];
        rate = 0.0;
        for x in 0..2 {
            for q in 0..=cap {
                let mass = pi[idx(x, q)];
                for (arrive, pa) in [(true, lam), (false, 1.0 - lam)] {
                    let mut q1 = if arrive { (q + 1).min(cap) } else { q };
                    if x == 1 && q1 > 0 {
                        q1 -= 1;
                        rate += mass * pa;
                    }
                    let stay = if x == 1 { phi } else { psi };
                    next[idx(x, q1)] += mass * pa * stay;
                    next[idx(1 - x, q1)] += mass * pa * (1.0 - stay);
                }
            }
        }
        pi = next;
    }
    rate
}

fn markov_oracle() -> Result<Outcome> {
    let (phi, psi, lam) = (0.95, 0.5, 0.8);
    let exact = power_iteration_throughput(phi, psi, lam, 1);
    let report = run_markov_oracle(phi, psi, lam, 1, 1_000_000, 7)?;
    let z = (report.empirical - exact) / report.standard_error;
    let detail = format!(
        "empirical {:.5} vs exact {:.5} over {} slots, z = {:.2} (SE {:.2e})",
        report.empirical, exact, report.slots, z, report.standard_error
    );
    Ok(Outcome::new(
        report.slots >= 1_000_000 && z.abs() <= 3.0 && (report.exact - exact).abs() < 1e-9,
        detail,
    ))
}

fn gradient_oracle() -> Result<Outcome> {
    let report = run_gradient_suite(50, 11)?;
    // Every stored behaviour log-probability must be reproduced exactly by
    // the unchanged policy.
    let env = EnvConfig::standard();
    let mut worst_ratio: f64 = 0.0;
    for two_phase in [false, true] {
        let train = TrainConfig {
            two_phase,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = MappoAgent::new(&env, &train, &mut rng)?;
        let mut runner = EnvRunner::new(&env, 17, 0)?;
        let buffer = collect_rollout(&mut runner, &agent, 128, &mut rng)?;
        for r in &buffer.actors {
            let lp = agent.log_prob(r.dispatcher, &r.obs, r.dispatch_obs.as_deref(), &r.action)?;
            worst_ratio = worst_ratio.max(((lp - r.log_prob).exp() - 1.0).abs());
        }
    }
    let detail = format!(
        "{} networks, max relative error {:.2e}; first-minibatch mean ratio {:.9}, max |ratio - 1| {:.1e}",
        report.networks, report.max_relative_error, report.first_epoch_ratio, worst_ratio
    );
    Ok(Outcome::new(
        report.max_relative_error < 1e-4 && (report.first_epoch_ratio - 1.0).abs() <= 1e-6 && worst_ratio <= 1e-6,
        detail,
    ))
}

fn learning_sanity() -> Result<Outcome> {
    let env = EnvConfig {
        n_dispatchers: 1,
        n_servers: 2,
        arrival_prob: vec![0.8],
        stay_available: vec![1.0, 0.0],
        stay_unavailable: vec![0.0, 1.0],
        queue_capacity: vec![3, 3],
        horizon: 256,
        allow_absorbing: true,
        ..EnvConfig::standard()
    };
    let train = TrainConfig {
        total_updates: 200,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&env, &train)?;
    while trainer.updates_done() < train.total_updates {
        trainer.step()?;
    }
    let mut to_good = 0u64;
    let mut total = 0u64;
    for e in 0..10 {
        let mut world = World::with_seed(&env, mix_seed(404, e))?;
        let mut controller = MappoController::seeded(trainer.agent().clone(), ActionMode::Sampled, e);
        for _ in 0..env.horizon {
            let action = controller.act(&world)?;
            for a in &action.actions {
                if let Some(k) = a.dispatch {
                    total += 1;
                    to_good += u64::from(k == 0);
                }
            }
            world.step(&action)?;
        }
    }
    let share = to_good as f64 / total as f64;
    Ok(Outcome::new(
        share > 0.95,
        format!(
            "{:.2}% of {total} jobs sent to the available server after 200 updates",
            100.0 * share
        ),
    ))
}

fn baseline_aggregate(
    values: Vec<f64>,
    policies: Vec<PolicySpec>,
) -> Result<Vec<aoi_dispatch::experiment::AggregateRow>> {
    let spec = SweepSpec::new(SweepParameter::QueryCost, values, policies);
    Ok(aggregate(&run_sweep(&spec, |_| Ok(()))?))
}

fn cost_ordering() -> Result<Outcome> {
    let never = PolicySpec::Baseline(BaselineKind::NeverQuery);
    let always = PolicySpec::Baseline(BaselineKind::AlwaysQuery);
    let agg = baseline_aggregate(vec![0.1, 0.3], vec![never, always])?;
    let find = |p: &str, v: f64| agg.iter().find(|a| a.policy == p && a.value == v).expect("cell exists");
    let (n1, a1, a3) = (find("never", 0.1), find("always", 0.1), find("always", 0.3));
    let detail = format!(
        "beta 0.1: always {:.3} vs never {:.3}; beta 0.3: always {:.3} ({} seeds)",
        a1.reward_mean, n1.reward_mean, a3.reward_mean, a1.seeds
    );
    Ok(Outcome::new(
        a1.reward_mean < n1.reward_mean && a3.reward_mean < 0.0 && a1.seeds == 5,
        detail,
    ))
}

/// Per-episode team reward per slot; episode `e` uses world seed `seed + e`.
fn episode_rewards<F>(env: &EnvConfig, episodes: u64, seed: u64, mut run: F) -> Result<Vec<f64>>
where
    F: FnMut(&EnvConfig, u64) -> Result<Metrics>,
{
    (0..episodes)
        .map(|e| run(env, seed + e).map(|m| m.reward_per_slot()))
        .collect()
}

fn baseline_rewards(kind: BaselineKind, env: &EnvConfig, episodes: u64, seed: u64) -> Result<Vec<f64>> {
    episode_rewards(env, episodes, seed, |env, s| {
        run_episodes(env, 1, s, |c| BaselineController::new(kind, c))
    })
}

fn mappo_rewards(agent: &MappoAgent, env: &EnvConfig, episodes: u64, seed: u64) -> Result<Vec<f64>> {
    episode_rewards(env, episodes, seed, |env, s| {
        evaluate(agent, env, 1, s, ActionMode::Sampled)
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Training configuration for the trained-policy criteria.
fn mappo_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        two_phase: true,
        learning_rate: 1e-3,
        critic_learning_rate: 1e-3,
        total_updates: 500,
        seed,
        ..TrainConfig::default()
    }
}

const SELECTION_SEED: u64 = 10_000;
const SELECTION_EPISODES: u64 = 10;
const EVAL_SEED: u64 = 20_000;
const EVAL_EPISODES: u64 = 50;

/// Trains three seeds and keeps the one with the best reward on episodes
/// disjoint from the final evaluation episodes.
fn best_of_three(env: &EnvConfig) -> Result<(MappoAgent, String)> {
    let mut best: Option<(f64, MappoAgent)> = None;
    let mut scores = Vec::new();
    for seed in 0..3 {
        let train = mappo_train_config(seed);
        let mut trainer = Trainer::new(env, &train)?;
        while trainer.updates_done() < train.total_updates {
            trainer.step()?;
        }
        let (score, _) = mean_se(&mappo_rewards(
            trainer.agent(),
            env,
            SELECTION_EPISODES,
            SELECTION_SEED,
        )?);
        scores.push(format!("{score:.3}"));
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, trainer.agent().clone()));
        }
    }
    let (_, agent) = best.expect("three seeds trained");
    Ok((agent, format!("selection rewards [{}]", scores.join(", "))))
}

fn to_row(policy: &str, env: &EnvConfig, metrics: &Metrics) -> ResultRow {
    let slots = metrics.slots.max(1) as f64;
    ResultRow {
        policy: policy.to_string(),
        parameter: "query_cost".to_string(),
        value: env.query_cost,
        seed: 0,
        query_cost: env.query_cost,
        reward_per_slot: metrics.reward / slots,
        throughput_per_slot: metrics.completions as f64 / slots,
        queries_per_slot: metrics.queries as f64 / slots,
        drops_per_slot: metrics.drops as f64 / slots,
    }
}

fn mappo_dominance() -> Result<Outcome> {
    let env = default_config();
    let (agent, selection) = best_of_three(&env)?;
    let m = mean_se(&mappo_rewards(&agent, &env, EVAL_EPISODES, EVAL_SEED)?);
    let never = mean_se(&baseline_rewards(
        BaselineKind::NeverQuery,
        &env,
        EVAL_EPISODES,
        EVAL_SEED,
    )?);
    let random = mean_se(&baseline_rewards(
        BaselineKind::RandomQuery(0.5),
        &env,
        EVAL_EPISODES,
        EVAL_SEED,
    )?);
    let margin_ok = |b: (f64, f64)| m.0 - b.0 > 2.0 * (m.1 * m.1 + b.1 * b.1).sqrt();
    let detail = format!(
        "MAPPO {:.4} ± {:.4}, never {:.4} ± {:.4}, random:0.5 {:.4} ± {:.4} over {EVAL_EPISODES} episodes; {selection}",
        m.0, m.1, never.0, never.1, random.0, random.1
    );
    Ok(Outcome::new(margin_ok(never) && margin_ok(random), detail))
}

fn low_load() -> Result<Outcome> {
    let env = default_config().with_arrival_prob(0.1);
    let (agent, selection) = best_of_three(&env)?;
    let m = mean_se(&mappo_rewards(&agent, &env, EVAL_EPISODES, EVAL_SEED)?);
    let never = mean_se(&baseline_rewards(
        BaselineKind::NeverQuery,
        &env,
        EVAL_EPISODES,
        EVAL_SEED,
    )?);
    let detail = format!(
        "MAPPO {:.4} vs never {:.4} (ratio {:.3}) over {EVAL_EPISODES} episodes; {selection}",
        m.0,
        never.0,
        m.0 / never.0
    );
    Ok(Outcome::new(m.0 <= 1.05 * never.0, detail))
}

fn accounting() -> Result<Outcome> {
    let policies = vec![
        PolicySpec::Baseline(BaselineKind::NeverQuery),
        PolicySpec::Baseline(BaselineKind::RandomQuery(0.5)),
        PolicySpec::Baseline(BaselineKind::AlwaysQuery),
    ];
    let mut rows = Vec::new();
    for (parameter, values) in [
        (SweepParameter::QueryCost, vec![0.0, 0.005, 0.05, 0.1, 0.3]),
        (SweepParameter::ArrivalProb, vec![0.1, 0.5, 0.8]),
        (SweepParameter::NDispatchers, vec![2.0, 5.0, 8.0]),
    ] {
        let spec = SweepSpec::new(parameter, values, policies.clone());
        rows.extend(run_sweep(&spec, |_| Ok(()))?);
    }
    let env = default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let agent = MappoAgent::new(&env, &mappo_train_config(0), &mut rng)?;
    let metrics = evaluate(&agent, &env, 3, 5, ActionMode::Sampled)?;
    rows.push(to_row("mappo", &env, &metrics));

    let worst = rows
        .iter()
        .map(|r| (r.reward_per_slot - (r.throughput_per_slot - r.query_cost * r.queries_per_slot)).abs())
        .fold(0.0, f64::max);
    let dir = std::env::temp_dir().join(format!("aoi-acceptance-{}", std::process::id()));
    let emitted = emit_report(&rows, &dir, ReportFormat::Csv);
    let _ = std::fs::remove_dir_all(&dir);
    let mut broken = rows[0].clone();
    broken.reward_per_slot += 10.0 * ACCOUNTING_TOLERANCE;
    let rejects = emit_report(&[broken], &dir, ReportFormat::Csv).is_err();
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Outcome::new(
        emitted.is_ok() && rejects && worst <= ACCOUNTING_TOLERANCE,
        format!(
            "{} rows, max residual {worst:.1e}; emit_report {} and rejects a perturbed row: {rejects}",
            rows.len(),
            if emitted.is_ok() { "accepted them" } else { "failed" }
        ),
    ))
}
