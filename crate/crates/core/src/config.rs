//! Static environment parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::settings::{cycle_to, Settings};

/// What happens when a dispatch would push a queue past its capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// The job at the queue head is evicted and its owner receives a NAK.
    #[default]
    DropOldest,
    /// The incoming job is refused and its owner receives a NAK.
    DropNewest,
}

impl std::str::FromStr for OverflowPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_oldest" => Ok(Self::DropOldest),
            "drop_newest" => Ok(Self::DropNewest),
            other => Err(Error::config(format!(
                "overflow must be drop_oldest or drop_newest, got `{other}`"
            ))),
        }
    }
}

/// All static parameters of one simulated system.
///
/// Per-server vectors (`stay_available`, `stay_unavailable`, `queue_capacity`)
/// have `n_servers` entries; `arrival_prob` has `n_dispatchers` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_dispatchers: usize,
    pub n_servers: usize,
    /// Bernoulli arrival probability per slot, per dispatcher.
    pub arrival_prob: Vec<f64>,
    /// P(available at t+1 | available at t), per server.
    pub stay_available: Vec<f64>,
    /// P(unavailable at t+1 | unavailable at t), per server.
    pub stay_unavailable: Vec<f64>,
    pub queue_capacity: Vec<usize>,
    /// Reward units charged per query.
    pub query_cost: f64,
    pub discount: f64,
    /// Slots per episode.
    pub horizon: usize,
    pub seed: u64,
    /// Largest AoI value represented in encoded observations. The true AoI is
    /// never capped.
    pub aoi_cap: u32,
    pub overflow: OverflowPolicy,
    /// Report the queue length after dispatch and service in ACK/NAK payloads
    /// instead of the slot-start length.
    pub report_post_service: bool,
    /// Permit absorbing availability chains (a stay probability of exactly 0
    /// or 1). Only meant for degenerate test instances.
    pub allow_absorbing: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl EnvConfig {
    /// Five dispatchers, five servers, λ=0.8, β=0.005, Q=3, with reliable
    /// odd-numbered servers (φ,ψ)=(0.95,0.50) and unreliable even-numbered
    /// servers (0.50,0.95).
    pub fn standard() -> Self {
        let n_servers = 5;
        let n_dispatchers = 5;
        Self {
            n_dispatchers,
            n_servers,
            arrival_prob: vec![0.8; n_dispatchers],
            stay_available: cycle_to(&[0.95, 0.50], n_servers),
            stay_unavailable: cycle_to(&[0.50, 0.95], n_servers),
            queue_capacity: vec![3; n_servers],
            query_cost: 0.005,
            discount: 0.99,
            horizon: 512,
            seed: 0,
            aoi_cap: 64,
            overflow: OverflowPolicy::DropOldest,
            report_post_service: false,
            allow_absorbing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dispatchers == 0 {
            return Err(Error::config("n_dispatchers must be >= 1"));
        }
        if self.n_servers == 0 {
            return Err(Error::config("n_servers must be >= 1"));
        }
        check_len("arrival_prob", self.arrival_prob.len(), self.n_dispatchers)?;
        check_len("stay_available", self.stay_available.len(), self.n_servers)?;
        check_len("stay_unavailable", self.stay_unavailable.len(), self.n_servers)?;
        check_len("queue_capacity", self.queue_capacity.len(), self.n_servers)?;
        for (n, &p) in self.arrival_prob.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("arrival_prob[{n}] = {p} outside [0,1]")));
            }
        }
        for k in 0..self.n_servers {
            let (phi, psi) = (self.stay_available[k], self.stay_unavailable[k]);
            if self.allow_absorbing {
                if !(0.0..=1.0).contains(&phi) || !(0.0..=1.0).contains(&psi) {
                    return Err(Error::config(format!(
                        "server {k}: stay probabilities ({phi}, {psi}) outside [0,1]"
                    )));
                }
                if phi + psi >= 2.0 || phi + psi <= 0.0 {
                    return Err(Error::config(format!(
                        "server {k}: ({phi}, {psi}) has no unique stationary distribution"
                    )));
                }
            } else if !open_unit(phi) || !open_unit(psi) {
                return Err(Error::config(format!(
                    "server {k}: stay probabilities ({phi}, {psi}) must lie in (0,1)"
                )));
            }
            if self.queue_capacity[k] == 0 {
                return Err(Error::config(format!("queue_capacity[{k}] must be >= 1")));
            }
        }
        if !(self.query_cost >= 0.0 && self.query_cost.is_finite()) {
            return Err(Error::config(format!(
                "query_cost = {} must be finite and >= 0",
                self.query_cost
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config(format!("discount = {} outside [0,1)", self.discount)));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if self.aoi_cap == 0 {
            return Err(Error::config("aoi_cap must be >= 1"));
        }
        Ok(())
    }

    /// Changes the dispatcher count, cycling the existing arrival
    /// probabilities over the new dispatchers.
    pub fn with_dispatchers(mut self, n: usize) -> Self {
        self.arrival_prob = cycle_to(&self.arrival_prob, n);
        self.n_dispatchers = n;
        self
    }

    /// Sets the same arrival probability for every dispatcher.
    pub fn with_arrival_prob(mut self, p: f64) -> Self {
        self.arrival_prob = vec![p; self.n_dispatchers];
        self
    }

    pub fn with_query_cost(mut self, beta: f64) -> Self {
        self.query_cost = beta;
        self
    }

    /// Applies settings on top of `self`, consuming every environment key.
    ///
    /// Counts are applied first; per-entity lists not mentioned in the
    /// settings are cycled from the current values to the new counts.
    pub fn apply_settings(mut self, settings: &mut Settings) -> Result<Self> {
        if let Some(n) = settings.take::<usize>("n_dispatchers")? {
            self.n_dispatchers = n;
        }
        if let Some(k) = settings.take::<usize>("n_servers")? {
            self.n_servers = k;
        }
        if self.n_dispatchers == 0 || self.n_servers == 0 {
            return Err(Error::config("n_dispatchers and n_servers must be >= 1"));
        }
        let n = self.n_dispatchers;
        let k = self.n_servers;
        self.arrival_prob = per_entity(settings, "arrival_prob", &self.arrival_prob, n)?;
        self.stay_available = per_entity(settings, "stay_available", &self.stay_available, k)?;
        self.stay_unavailable = per_entity(settings, "stay_unavailable", &self.stay_unavailable, k)?;
        self.queue_capacity = per_entity(settings, "queue_capacity", &self.queue_capacity, k)?;
        if let Some(v) = settings.take("query_cost")? {
            self.query_cost = v;
        }
        if let Some(v) = settings.take("discount")? {
            self.discount = v;
        }
        if let Some(v) = settings.take("horizon")? {
            self.horizon = v;
        }
        if let Some(v) = settings.take("seed")? {
            self.seed = v;
        }
        if let Some(v) = settings.take("aoi_cap")? {
            self.aoi_cap = v;
        }
        if let Some(raw) = settings.take_raw("overflow") {
            self.overflow = raw.parse()?;
        }
        if let Some(v) = settings.take("report_post_service")? {
            self.report_post_service = v;
        }
        if let Some(v) = settings.take("allow_absorbing")? {
            self.allow_absorbing = v;
        }
        self.validate()?;
        Ok(self)
    }
}

fn open_unit(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::config(format!("{name} has {got} entries, expected {want}")));
    }
    Ok(())
}

fn per_entity<T: Clone + std::str::FromStr>(
    settings: &mut Settings,
    key: &str,
    current: &[T],
    len: usize,
) -> Result<Vec<T>> {
    match settings.take_list::<T>(key)? {
        Some(list) if list.len() == 1 => Ok(vec![list[0].clone(); len]),
        Some(list) if list.len() == len => Ok(list),
        Some(list) => Err(Error::config(format!(
            "{key} lists {} values, expected 1 or {len}",
            list.len()
        ))),
        None => Ok(cycle_to(current, len)),
    }
}
