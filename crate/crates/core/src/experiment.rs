//! Parameter sweeps over policies and seeds, and their CSV/JSONL reports.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::{run_episodes, Metrics};
use crate::mappo::{evaluate, ActionMode, Checkpoint, MappoAgent, MappoController, TrainConfig, Trainer};
use crate::policy::{BaselineController, Controller, MappoSource, PolicySpec};
use crate::settings::Settings;

/// Tolerance of the per-row identity reward = throughput − β·queries.
pub const ACCOUNTING_TOLERANCE: f64 = 1e-9;

/// K=5, N=5, λ=0.8, β=0.005, Q=3, alternating (φ, ψ) of (0.95, 0.50) and
/// (0.50, 0.95) starting with the first server.
pub fn default_config() -> EnvConfig {
    EnvConfig::standard()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    QueryCost,
    ArrivalProb,
    NDispatchers,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::QueryCost => "query_cost",
            SweepParameter::ArrivalProb => "arrival_prob",
            SweepParameter::NDispatchers => "n_dispatchers",
        }
    }

    /// `base` with this parameter set to `value`; the result is validated.
    /// Sweeping the dispatcher count leaves the server count unchanged.
    pub fn apply(self, base: &EnvConfig, value: f64) -> Result<EnvConfig> {
        let cfg = match self {
            SweepParameter::QueryCost => base.clone().with_query_cost(value),
            SweepParameter::ArrivalProb => base.clone().with_arrival_prob(value),
            SweepParameter::NDispatchers => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config(format!(
                        "n_dispatchers value {value} is not a positive integer"
                    )));
                }
                base.clone().with_dispatchers(value as usize)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query_cost" => Ok(Self::QueryCost),
            "arrival_prob" => Ok(Self::ArrivalProb),
            "n_dispatchers" => Ok(Self::NDispatchers),
            other => Err(Error::config(format!(
                "cannot sweep `{other}` (expected query_cost, arrival_prob or n_dispatchers)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    pub seeds: Vec<u64>,
    /// Evaluation episodes per (policy, value, seed) cell.
    pub episodes: usize,
    /// How trained policies act during evaluation.
    pub eval_mode: ActionMode,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl SweepSpec {
    /// Five evaluation seeds, one episode each.
    pub fn new(parameter: SweepParameter, values: Vec<f64>, policies: Vec<PolicySpec>) -> Self {
        Self {
            parameter,
            values,
            policies,
            seeds: (1..=5).collect(),
            episodes: 1,
            eval_mode: ActionMode::Sampled,
            env: default_config(),
            train: TrainConfig::default(),
        }
    }

    /// Reads `parameter`, `values`, `policies`, `seeds`, `episodes` plus any
    /// environment and training keys. Unknown keys are an error.
    pub fn from_settings(mut settings: Settings) -> Result<Self> {
        let parameter: SweepParameter = settings
            .take_raw("parameter")
            .ok_or_else(|| Error::config("sweep needs `parameter`"))?
            .parse()?;
        let values: Vec<f64> = settings
            .take_list("values")?
            .ok_or_else(|| Error::config("sweep needs `values`"))?;
        let policies: Vec<PolicySpec> = settings
            .take_list("policies")?
            .ok_or_else(|| Error::config("sweep needs `policies`"))?;
        let mut spec = Self::new(parameter, values, policies);
        if let Some(seeds) = settings.take_list("seeds")? {
            spec.seeds = seeds;
        }
        if let Some(episodes) = settings.take("episodes")? {
            spec.episodes = episodes;
        }
        spec.env = default_config().apply_settings(&mut settings)?;
        spec.train = TrainConfig::default().apply_settings(&mut settings)?;
        spec.eval_mode = spec.train.eval_mode;
        settings.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Rejects the spec before any run starts.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep has no values"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("sweep has no policies"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep needs at least one seed"));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes must be >= 1"));
        }
        self.train.validate()?;
        for &v in &self.values {
            let cfg = self.parameter.apply(&self.env, v)?;
            for policy in &self.policies {
                match policy {
                    PolicySpec::Baseline(kind) => kind.validate()?,
                    PolicySpec::Mappo(MappoSource::Checkpoint(path)) => {
                        let ckpt = Checkpoint::load(path)?;
                        ckpt.agent.check_against(&cfg).map_err(|e| Error::Checkpoint {
                            path: path.clone(),
                            message: format!("incompatible with {} = {v}: {e}", self.parameter),
                        })?;
                    }
                    PolicySpec::Mappo(MappoSource::Train) => {}
                }
            }
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.policies.len() * self.values.len() * self.seeds.len()
    }
}

/// A controller for `policy` on `env`. Training directives are rejected:
/// a trained policy must come from a checkpoint here.
pub fn build_controller(
    policy: &PolicySpec,
    env: &EnvConfig,
    mode: ActionMode,
    seed: u64,
) -> Result<Box<dyn Controller>> {
    match policy {
        PolicySpec::Baseline(kind) => Ok(Box::new(BaselineController::new(*kind, seed)?)),
        PolicySpec::Mappo(MappoSource::Checkpoint(path)) => {
            let agent = Checkpoint::load(path)?.agent;
            agent.check_against(env).map_err(|e| Error::Checkpoint {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(Box::new(MappoController::seeded(agent, mode, seed)))
        }
        PolicySpec::Mappo(MappoSource::Train) => Err(Error::config(
            "mappo:train is only meaningful in a sweep; train first and pass mappo:<checkpoint>",
        )),
    }
}

/// One evaluated (policy, value, seed) cell. Rates are team totals per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub query_cost: f64,
    pub reward_per_slot: f64,
    pub throughput_per_slot: f64,
    pub queries_per_slot: f64,
    pub drops_per_slot: f64,
}

impl ResultRow {
    fn from_metrics(policy: &PolicySpec, spec: &SweepSpec, value: f64, seed: u64, beta: f64, m: &Metrics) -> Self {
        Self {
            policy: policy.label(),
            parameter: spec.parameter.name().to_string(),
            value,
            seed,
            query_cost: beta,
            reward_per_slot: m.reward_per_slot(),
            throughput_per_slot: m.throughput_per_slot(),
            queries_per_slot: m.queries_per_slot(),
            drops_per_slot: m.drops_per_slot(),
        }
    }

    /// reward − (throughput − β·queries).
    pub fn accounting_residual(&self) -> f64 {
        self.reward_per_slot - (self.throughput_per_slot - self.query_cost * self.queries_per_slot)
    }
}

/// Evaluates the cross product policy × value × seed in that nesting order.
/// Trained policies are trained once per value (with `spec.train`) and
/// reused for every seed. Each row is passed to `on_row` as soon as it
/// exists.
pub fn run_sweep<F>(spec: &SweepSpec, mut on_row: F) -> Result<Vec<ResultRow>>
where
    F: FnMut(&ResultRow) -> Result<()>,
{
    spec.validate()?;
    let configs = spec
        .values
        .iter()
        .map(|&v| spec.parameter.apply(&spec.env, v))
        .collect::<Result<Vec<_>>>()?;
    let mut trained: BTreeMap<usize, MappoAgent> = BTreeMap::new();
    let mut rows = Vec::with_capacity(spec.row_count());
    for policy in &spec.policies {
        for (vi, (&value, cfg)) in spec.values.iter().zip(&configs).enumerate() {
            let agent = match policy {
                PolicySpec::Baseline(_) => None,
                PolicySpec::Mappo(MappoSource::Checkpoint(path)) => Some(Checkpoint::load(path)?.agent),
                PolicySpec::Mappo(MappoSource::Train) => match trained.entry(vi) {
                    Entry::Occupied(e) => Some(e.get().clone()),
                    Entry::Vacant(e) => {
                        let mut trainer = Trainer::new(cfg, &spec.train)?;
                        trainer.run(|_, _, _| Ok(()))?;
                        Some(e.insert(trainer.agent().clone()).clone())
                    }
                },
            };
            for &seed in &spec.seeds {
                let metrics = match (policy, &agent) {
                    (PolicySpec::Baseline(kind), _) => {
                        run_episodes(cfg, spec.episodes, seed, |s| BaselineController::new(*kind, s))?
                    }
                    (PolicySpec::Mappo(_), Some(agent)) => evaluate(agent, cfg, spec.episodes, seed, spec.eval_mode)?,
                    (PolicySpec::Mappo(_), None) => unreachable!("trained policies always carry an agent"),
                };
                let row = ResultRow::from_metrics(policy, spec, value, seed, cfg.query_cost, &metrics);
                check_accounting(&row)?;
                on_row(&row)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn check_accounting(row: &ResultRow) -> Result<()> {
    let residual = row.accounting_residual();
    if residual.abs() > ACCOUNTING_TOLERANCE || !residual.is_finite() {
        return Err(Error::Accounting(format!(
            "policy {} value {} seed {}: reward {} vs throughput {} - {} x queries {} (residual {residual:e})",
            row.policy,
            row.value,
            row.seed,
            row.reward_per_slot,
            row.throughput_per_slot,
            row.query_cost,
            row.queries_per_slot
        )));
    }
    Ok(())
}

/// Mean and standard error over seeds for one (policy, value) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub parameter: String,
    pub value: f64,
    pub seeds: usize,
    pub reward_mean: f64,
    pub reward_se: f64,
    pub throughput_mean: f64,
    pub throughput_se: f64,
    pub queries_mean: f64,
    pub queries_se: f64,
    pub drops_mean: f64,
    pub drops_se: f64,
}

/// Sample mean and standard error (sample standard deviation / √n; 0 for
/// a single observation).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups rows by (policy, value) in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.policy.clone(), row.value.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let stat = |f: fn(&ResultRow) -> f64| mean_and_se(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (reward_mean, reward_se) = stat(|r| r.reward_per_slot);
            let (throughput_mean, throughput_se) = stat(|r| r.throughput_per_slot);
            let (queries_mean, queries_se) = stat(|r| r.queries_per_slot);
            let (drops_mean, drops_se) = stat(|r| r.drops_per_slot);
            AggregateRow {
                policy: g[0].policy.clone(),
                parameter: g[0].parameter.clone(),
                value: g[0].value,
                seeds: g.len(),
                reward_mean,
                reward_se,
                throughput_mean,
                throughput_se,
                queries_mean,
                queries_se,
                drops_mean,
                drops_se,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::config(format!("format must be csv or jsonl, got `{other}`"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Jsonl => "jsonl",
        }
    }
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub aggregate: PathBuf,
    pub plot: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_records<T: Serialize>(path: &Path, records: &[T], format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(create(path)?);
            for r in records {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        ReportFormat::Jsonl => {
            let mut w = create(path)?;
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Writes `results.<ext>` (one line per row), `aggregate.<ext>` (mean and
/// standard error per policy and value) and `plot.csv`, a wide table with
/// one line per swept value and `<policy>_reward_mean` / `<policy>_reward_se`
/// columns. Every row is checked against the accounting identity first.
pub fn emit_report(rows: &[ResultRow], out_dir: &Path, format: ReportFormat) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::config("no rows to report"));
    }
    for row in rows {
        check_accounting(row)?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = ReportFiles {
        results: out_dir.join(format!("results.{}", format.extension())),
        aggregate: out_dir.join(format!("aggregate.{}", format.extension())),
        plot: out_dir.join("plot.csv"),
    };
    write_records(&files.results, rows, format)?;
    let agg = aggregate(rows);
    write_records(&files.aggregate, &agg, format)?;

    let mut policies: Vec<&str> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for a in &agg {
        if !policies.contains(&a.policy.as_str()) {
            policies.push(&a.policy);
        }
        if !values.iter().any(|v| v.to_bits() == a.value.to_bits()) {
            values.push(a.value);
        }
    }
    let mut w = csv::Writer::from_writer(create(&files.plot)?);
    let mut header = vec![rows[0].parameter.clone()];
    for p in &policies {
        header.push(format!("{p}_reward_mean"));
        header.push(format!("{p}_reward_se"));
    }
    w.write_record(&header)?;
    for v in values {
        let mut line = vec![v.to_string()];
        for p in &policies {
            match agg.iter().find(|a| a.policy == *p && a.value.to_bits() == v.to_bits()) {
                Some(a) => {
                    line.push(a.reward_mean.to_string());
                    line.push(a.reward_se.to_string());
                }
                None => line.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| Error::io(&files.plot, e))?;
    Ok(files)
}

/// Appends rows to a line-delimited file as they are produced, flushing
/// after each one so an interrupted sweep keeps its finished cells.
pub struct RowLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RowLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            out: create(path)?,
        })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
