use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::settings::Settings;

/// How actions are drawn from a trained policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Sampled,
    Greedy,
}

impl std::str::FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "greedy" => Ok(Self::Greedy),
            other => Err(Error::config(format!(
                "action mode must be sampled or greedy, got `{other}`"
            ))),
        }
    }
}

/// MAPPO hyperparameters. The discount factor is taken from the environment
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gae_lambda: f64,
    /// Slots collected per update.
    pub rollout_length: usize,
    pub epochs_per_update: usize,
    pub minibatch_count: usize,
    pub total_updates: usize,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub max_grad_norm: f64,
    pub hidden_sizes: Vec<usize>,
    /// One actor shared by all dispatchers, with a one-hot dispatcher id
    /// appended to its input.
    pub parameter_sharing: bool,
    /// Condition the dispatch head on the observation refreshed by this
    /// slot's own query answers instead of the pre-query observation.
    pub two_phase: bool,
    pub normalize_advantages: bool,
    /// Train the critic against running-normalised return targets.
    pub value_normalization: bool,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_mode: ActionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gae_lambda: 0.95,
            rollout_length: 256,
            epochs_per_update: 4,
            minibatch_count: 4,
            total_updates: 500,
            learning_rate: 3e-4,
            critic_learning_rate: 3e-4,
            max_grad_norm: 0.5,
            hidden_sizes: vec![64, 64],
            parameter_sharing: true,
            two_phase: false,
            normalize_advantages: true,
            value_normalization: true,
            eval_interval: 50,
            eval_episodes: 4,
            eval_mode: ActionMode::Sampled,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip_epsilon", self.clip_epsilon),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("learning_rate", self.learning_rate),
            ("critic_learning_rate", self.critic_learning_rate),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} = {v} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config(format!("gae_lambda = {} outside [0,1]", self.gae_lambda)));
        }
        for (name, v) in [
            ("rollout_length", self.rollout_length),
            ("epochs_per_update", self.epochs_per_update),
            ("minibatch_count", self.minibatch_count),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.minibatch_count > self.rollout_length {
            return Err(Error::config("minibatch_count cannot exceed rollout_length"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer widths must be >= 1"));
        }
        Ok(())
    }

    /// Applies settings on top of `self`, consuming every training key.
    pub fn apply_settings(mut self, s: &mut Settings) -> Result<Self> {
        macro_rules! take {
            ($($field:ident),*) => {
                $( if let Some(v) = s.take(stringify!($field))? { self.$field = v; } )*
            };
        }
        take!(
            clip_epsilon,
            value_coef,
            entropy_coef,
            gae_lambda,
            rollout_length,
            epochs_per_update,
            minibatch_count,
            total_updates,
            learning_rate,
            critic_learning_rate,
            max_grad_norm,
            parameter_sharing,
            two_phase,
            normalize_advantages,
            value_normalization,
            eval_interval,
            eval_episodes
        );
        if let Some(v) = s.take_list("hidden_sizes")? {
            self.hidden_sizes = v;
        }
        if let Some(raw) = s.take_raw("eval_mode") {
            self.eval_mode = raw.parse()?;
        }
        if let Some(v) = s.take("train_seed")? {
            self.seed = v;
        }
        self.validate()?;
        Ok(self)
    }
}
