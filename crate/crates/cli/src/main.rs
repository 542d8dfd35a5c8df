//! Command-line harness: simulate, train, evaluate, sweep, selftest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_dispatch::env::{SlotRecord, World};
use aoi_dispatch::eval::{mix_seed, run_episode, Metrics};
use aoi_dispatch::experiment::{build_controller, emit_report, run_sweep, ReportFormat, RowLog, SweepSpec};
use aoi_dispatch::mappo::{ActionMode, Checkpoint, TrainConfig, Trainer};
use aoi_dispatch::policy::PolicySpec;
use aoi_dispatch::settings::Settings;
use aoi_dispatch::validation::{run_gradient_suite, run_invariant_suite, run_markov_oracle};
use aoi_dispatch::{EnvConfig, Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aoi-dispatch",
    version,
    about = "Multi-dispatcher edge computing simulator with costly status queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Key = value configuration file (environment and training keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set query_cost=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the run (environment seed for simulate/evaluate, training seed for train/sweep).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Output format for record files.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode of a policy and dump the per-slot trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// never | random:<p> | always | mappo:<checkpoint>
        #[arg(long, default_value = "never")]
        policy: String,
        /// Number of slots (defaults to the configured horizon).
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Train MAPPO, writing a progress log and periodic checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a policy (a baseline or a checkpoint) over several episodes.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// never | random:<p> | always | mappo:<checkpoint>
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// sampled | greedy (trained policies only)
        #[arg(long, default_value = "sampled")]
        mode: String,
    },
    /// Run a parameter sweep described by a key = value spec file.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep spec (parameter, values, policies, seeds, episodes, plus config keys).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run the environment invariant suite, the Markov-chain oracle and the gradient checks.
    Selftest {
        #[command(flatten)]
        common: Common,
        /// Smaller sample sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
}

fn load_settings(common: &Common) -> Result<Settings> {
    let mut settings = match &common.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    for assignment in &common.overrides {
        settings.set_override(assignment)?;
    }
    Ok(settings)
}

fn load_configs(common: &Common) -> Result<(EnvConfig, TrainConfig)> {
    let mut settings = load_settings(common)?;
    let env = EnvConfig::standard().apply_settings(&mut settings)?;
    let train = TrainConfig::default().apply_settings(&mut settings)?;
    settings.finish()?;
    Ok((env, train))
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes serializable records as CSV or one JSON object per line.
struct RecordWriter {
    path: PathBuf,
    inner: Sink,
}

enum Sink {
    Csv(Box<csv::Writer<BufWriter<File>>>),
    Jsonl(BufWriter<File>),
}

impl RecordWriter {
    fn create(dir: &Path, stem: &str, format: ReportFormat) -> Result<Self> {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        let file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        let inner = match format {
            ReportFormat::Csv => Sink::Csv(Box::new(csv::Writer::from_writer(file))),
            ReportFormat::Jsonl => Sink::Jsonl(file),
        };
        Ok(Self { path, inner })
    }

    fn write<T: serde::Serialize>(&mut self, record: &T) -> Result<()> {
        match &mut self.inner {
            Sink::Csv(w) => w.serialize(record)?,
            Sink::Jsonl(w) => {
                serde_json::to_writer(&mut *w, record)?;
                w.write_all(b"\n").map_err(io_err(&self.path))?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        match &mut self.inner {
            Sink::Csv(w) => w.flush(),
            Sink::Jsonl(w) => w.flush(),
        }
        .map_err(io_err(&self.path))
    }
}

/// Flat per-slot row for CSV output; vectors are `;`-joined.
#[derive(serde::Serialize)]
struct FlatSlot {
    slot: u64,
    available: String,
    queue: String,
    arrivals: String,
    queries: String,
    dispatch: String,
    rewards: String,
    team_reward: f64,
    acks: usize,
    naks: usize,
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl From<&SlotRecord> for FlatSlot {
    fn from(r: &SlotRecord) -> Self {
        Self {
            slot: r.slot,
            available: join(r.available.iter().map(|&a| u8::from(a))),
            queue: join(&r.queue),
            arrivals: join(r.arrivals.iter().map(|&a| u8::from(a))),
            queries: join(r.actions.iter().map(|a| a.query_count())),
            dispatch: join(
                r.actions
                    .iter()
                    .map(|a| a.dispatch.map_or("-".to_string(), |k| k.to_string())),
            ),
            rewards: join(&r.rewards),
            team_reward: r.team_reward,
            acks: r.feedback.iter().filter(|e| e.accepted).count(),
            naks: r.feedback.iter().filter(|e| !e.accepted).count(),
        }
    }
}

#[derive(serde::Serialize)]
struct MetricsRow<'a> {
    policy: &'a str,
    episodes: usize,
    slots: u64,
    reward_per_slot: f64,
    throughput_per_slot: f64,
    queries_per_slot: f64,
    drops_per_slot: f64,
}

impl<'a> MetricsRow<'a> {
    fn new(policy: &'a str, episodes: usize, m: &Metrics) -> Self {
        Self {
            policy,
            episodes,
            slots: m.slots,
            reward_per_slot: m.reward_per_slot(),
            throughput_per_slot: m.throughput_per_slot(),
            queries_per_slot: m.queries_per_slot(),
            drops_per_slot: m.drops_per_slot(),
        }
    }
}

fn simulate(common: &Common, policy: &str, slots: Option<usize>) -> Result<()> {
    let (mut env, train) = load_configs(common)?;
    if let Some(seed) = common.seed {
        env.seed = seed;
    }
    let policy: PolicySpec = policy.parse()?;
    prepare_out_dir(&common.out_dir)?;
    let mut controller = build_controller(&policy, &env, train.eval_mode, mix_seed(env.seed, 1))?;
    let mut world = World::new(&env)?;
    let mut out = RecordWriter::create(&common.out_dir, "trajectory", common.format)?;
    let mut total = 0.0;
    let n = slots.unwrap_or(env.horizon);
    for _ in 0..n {
        let action = controller.act(&world)?;
        let before = world.clone();
        let outcome = world.step(&action)?;
        total += outcome.rewards.team;
        let record = SlotRecord::capture(&before, &action.actions, &outcome);
        match common.format {
            ReportFormat::Jsonl => out.write(&record)?,
            ReportFormat::Csv => out.write(&FlatSlot::from(&record))?,
        }
    }
    out.flush()?;
    println!(
        "{} slots, policy {}, mean team reward per slot {:.4}; trajectory in {}",
        n,
        policy.label(),
        total / n.max(1) as f64,
        out.path.display()
    );
    Ok(())
}

fn train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let (env, mut train) = load_configs(common)?;
    if let Some(seed) = common.seed {
        train.seed = seed;
    }
    prepare_out_dir(&common.out_dir)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let train = TrainConfig {
                total_updates: train.total_updates.max(ckpt.updates_done),
                ..ckpt.train.clone()
            };
            ckpt.into_trainer(Some(&train))?
        }
        None => Trainer::new(&env, &train)?,
    };
    let ckpt_path = common.out_dir.join("checkpoint.json");
    let mut log = RecordWriter::create(&common.out_dir, "progress", common.format)?;
    trainer.run(|t, record, at_eval| {
        log.write(&ProgressLine::from(record))?;
        log.flush()?;
        if at_eval {
            Checkpoint::from_trainer(t).save(&ckpt_path)?;
            println!(
                "update {:>5}  rollout reward {:.4}  eval reward {:.4}  entropy {:.3}  clip {:.3}",
                record.update,
                record.rollout_reward,
                record.eval_reward.unwrap_or(f64::NAN),
                record.stats.entropy,
                record.stats.clip_fraction
            );
        }
        Ok(())
    })?;
    Checkpoint::from_trainer(&trainer).save(&ckpt_path)?;
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

/// Progress record with every field at top level (CSV cannot nest).
#[derive(serde::Serialize)]
struct ProgressLine {
    update: usize,
    slots: u64,
    rollout_reward: f64,
    eval_reward: Option<f64>,
    policy_objective: f64,
    value_loss: f64,
    entropy: f64,
    total_loss: f64,
    mean_ratio: f64,
    first_mean_ratio: f64,
    clip_fraction: f64,
    skipped_minibatches: usize,
    excluded_samples: usize,
}

impl From<&aoi_dispatch::mappo::ProgressRecord> for ProgressLine {
    fn from(r: &aoi_dispatch::mappo::ProgressRecord) -> Self {
        Self {
            update: r.update,
            slots: r.slots,
            rollout_reward: r.rollout_reward,
            eval_reward: r.eval_reward,
            policy_objective: r.stats.policy_objective,
            value_loss: r.stats.value_loss,
            entropy: r.stats.entropy,
            total_loss: r.stats.total_loss,
            mean_ratio: r.stats.mean_ratio,
            first_mean_ratio: r.stats.first_mean_ratio,
            clip_fraction: r.stats.clip_fraction,
            skipped_minibatches: r.stats.skipped_minibatches,
            excluded_samples: r.stats.excluded_samples,
        }
    }
}

fn evaluate(common: &Common, policy: &str, episodes: usize, mode: &str) -> Result<()> {
    let (mut env, _) = load_configs(common)?;
    if let Some(seed) = common.seed {
        env.seed = seed;
    }
    let policy: PolicySpec = policy.parse()?;
    let mode: ActionMode = mode.parse()?;
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    prepare_out_dir(&common.out_dir)?;
    let mut total = Metrics::default();
    for e in 0..episodes as u64 {
        let mut controller = build_controller(&policy, &env, mode, mix_seed(env.seed, 2 * e + 1))?;
        total.merge(&run_episode(controller.as_mut(), &env, mix_seed(env.seed, 2 * e))?);
    }
    let label = policy.label();
    let row = MetricsRow::new(&label, episodes, &total);
    let mut out = RecordWriter::create(&common.out_dir, "metrics", common.format)?;
    out.write(&row)?;
    out.flush()?;
    println!(
        "{label}: reward/slot {:.4}  throughput/slot {:.4}  queries/slot {:.4}  drops/slot {:.4}  ({} slots)",
        row.reward_per_slot, row.throughput_per_slot, row.queries_per_slot, row.drops_per_slot, row.slots
    );
    Ok(())
}

fn sweep(common: &Common, spec_path: &Path) -> Result<()> {
    let mut settings = Settings::from_file(spec_path)?;
    if let Some(path) = &common.config {
        return Err(Error::Config(format!(
            "sweep reads its configuration from --spec; drop --config {}",
            path.display()
        )));
    }
    for assignment in &common.overrides {
        settings.set_override(assignment)?;
    }
    if let Some(seed) = common.seed {
        settings.set_override(&format!("train_seed={seed}"))?;
    }
    let spec = SweepSpec::from_settings(settings)?;
    prepare_out_dir(&common.out_dir)?;
    let mut partial = RowLog::create(&common.out_dir.join("results.partial.jsonl"))?;
    let total = spec.row_count();
    let mut done = 0;
    let rows = run_sweep(&spec, |row| {
        done += 1;
        println!(
            "[{done}/{total}] {} {}={} seed {}: reward/slot {:.4}",
            row.policy, row.parameter, row.value, row.seed, row.reward_per_slot
        );
        partial.append(row)
    })?;
    let files = emit_report(&rows, &common.out_dir, common.format)?;
    println!(
        "wrote {}, {} and {}",
        files.results.display(),
        files.aggregate.display(),
        files.plot.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct SelftestRow {
    check: &'static str,
    passed: bool,
    detail: String,
}

fn selftest(common: &Common, quick: bool) -> Result<bool> {
    let seed = common.seed.unwrap_or(0);
    let (configs, steps, slots, networks) = if quick {
        (10, 200, 100_000, 10)
    } else {
        (50, 2_000, 1_000_000, 50)
    };
    let mut rows = Vec::new();

    let inv = run_invariant_suite(configs, steps, seed)?;
    rows.push(SelftestRow {
        check: "environment invariants",
        passed: inv.passed(),
        detail: format!(
            "{} configs, {} steps, {} violations, {} replay mismatches{}",
            inv.configs,
            inv.steps,
            inv.violations.len(),
            inv.replay_mismatches,
            inv.violations
                .first()
                .map(|v| format!("; first: {v}"))
                .unwrap_or_default()
        ),
    });

    let oracle = run_markov_oracle(0.95, 0.5, 0.8, 1, slots, seed)?;
    rows.push(SelftestRow {
        check: "markov oracle",
        passed: oracle.z_score().abs() <= 3.0,
        detail: format!(
            "empirical {:.5} exact {:.5} se {:.5} z {:.2}",
            oracle.empirical,
            oracle.exact,
            oracle.standard_error,
            oracle.z_score()
        ),
    });

    let grad = run_gradient_suite(networks, seed)?;
    rows.push(SelftestRow {
        check: "gradient oracle",
        passed: grad.max_relative_error < 1e-4 && (grad.first_epoch_ratio - 1.0).abs() < 1e-6,
        detail: format!(
            "{} networks, max relative error {:.2e}, first-epoch ratio {:.9}",
            grad.networks, grad.max_relative_error, grad.first_epoch_ratio
        ),
    });

    prepare_out_dir(&common.out_dir)?;
    let mut out = RecordWriter::create(&common.out_dir, "selftest", common.format)?;
    for row in &rows {
        println!(
            "{} {}: {}",
            if row.passed { "PASS" } else { "FAIL" },
            row.check,
            row.detail
        );
        out.write(row)?;
    }
    out.flush()?;
    Ok(rows.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, policy, slots } => simulate(common, policy, *slots).map(|_| true),
        Command::Train { common, resume } => train(common, resume.as_deref()).map(|_| true),
        Command::Evaluate {
            common,
            policy,
            episodes,
            mode,
        } => evaluate(common, policy, *episodes, mode).map(|_| true),
        Command::Sweep { common, spec } => sweep(common, spec).map(|_| true),
        Command::Selftest { common, quick } => selftest(common, *quick),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
