//! On-policy rollout storage.

use super::gae::compute_gae;
use crate::env::DispatcherAction;
use crate::error::{Error, Result};

/// One dispatcher's decision in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorRecord {
    /// Index of the slot within the rollout.
    pub slot: usize,
    pub dispatcher: usize,
    pub obs: Vec<f64>,
    pub dispatch_obs: Option<Vec<f64>>,
    pub action: DispatcherAction,
    /// Behaviour log-probability at collection time.
    pub log_prob: f64,
}

/// The centralized view of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticRecord {
    pub state: Vec<f64>,
    /// Team reward earned in this slot.
    pub reward: f64,
    /// Critic estimate V(s_t) at collection time.
    pub value: f64,
    /// Set on the last slot of a segment: the value of the state reached
    /// after it (the truncation bootstrap, or 0 for a true terminal).
    pub bootstrap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub actors: Vec<ActorRecord>,
    pub critic: Vec<CriticRecord>,
    /// Per-slot advantages; empty until [`RolloutBuffer::compute_advantages`].
    pub advantages: Vec<f64>,
    /// Per-slot critic targets.
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of slots recorded.
    pub fn len(&self) -> usize {
        self.critic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critic.is_empty()
    }

    pub fn has_advantages(&self) -> bool {
        !self.critic.is_empty() && self.advantages.len() == self.critic.len()
    }

    pub fn clear(&mut self) {
        self.actors.clear();
        self.critic.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    /// Runs GAE independently on every segment delimited by a bootstrap.
    /// The final slot must carry one.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        match self.critic.last() {
            None => return Err(Error::contract("cannot compute advantages of an empty rollout")),
            Some(last) if last.bootstrap.is_none() => {
                return Err(Error::contract("rollout ends without a bootstrap value"));
            }
            _ => {}
        }
        self.advantages.clear();
        self.returns.clear();
        let mut start = 0;
        for (t, rec) in self.critic.iter().enumerate() {
            if let Some(tail) = rec.bootstrap {
                let segment = &self.critic[start..=t];
                let rewards: Vec<f64> = segment.iter().map(|r| r.reward).collect();
                let mut values: Vec<f64> = segment.iter().map(|r| r.value).collect();
                values.push(tail);
                let out = compute_gae(&rewards, &values, gamma, lambda)?;
                self.advantages.extend(out.advantages);
                self.returns.extend(out.returns);
                start = t + 1;
            }
        }
        Ok(())
    }
}
