use serde::{Deserialize, Serialize};

use super::types::{DispatcherAction, FeedbackEvent, StepOutcome};
use super::world::World;

/// One line of a trajectory dump: slot-start ground truth, the actions taken
/// and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub available: Vec<bool>,
    pub queue: Vec<usize>,
    pub arrivals: Vec<bool>,
    pub actions: Vec<DispatcherAction>,
    pub rewards: Vec<f64>,
    pub team_reward: f64,
    pub feedback: Vec<FeedbackEvent>,
}

impl SlotRecord {
    /// `before` must be the world as it was before `outcome` was produced.
    pub fn capture(before: &World, actions: &[DispatcherAction], outcome: &StepOutcome) -> Self {
        Self {
            slot: outcome.slot,
            available: before.slot_start().iter().map(|s| s.available).collect(),
            queue: before.slot_start().iter().map(|s| s.queue).collect(),
            arrivals: before.arrivals().to_vec(),
            actions: actions.to_vec(),
            rewards: outcome.rewards.per_dispatcher.clone(),
            team_reward: outcome.rewards.team,
            feedback: outcome.feedback.clone(),
        }
    }
}
