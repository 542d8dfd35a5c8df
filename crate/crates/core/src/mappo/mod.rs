//! Multi-agent PPO with decentralized actors and a centralized critic.

mod agent;
mod buffer;
mod checkpoint;
mod config;
mod encode;
mod gae;
mod loss;
mod trainer;

pub use agent::{Decision, MappoAgent, MappoController, RunningNorm};
pub use buffer::{ActorRecord, CriticRecord, RolloutBuffer};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ActionMode, TrainConfig};
pub use encode::{actor_input_dim, critic_input_dim, encode_observation, encode_state};
pub use gae::{compute_gae, normalize, GaeOutput};
pub use loss::{clipped_surrogate, total_loss, value_loss, Surrogate};
pub use trainer::{
    collect_rollout, evaluate, mappo_update, EnvRunner, Optimizers, ProgressRecord, Trainer, UpdateStats,
};
