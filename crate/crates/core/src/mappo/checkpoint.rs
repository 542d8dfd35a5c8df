//! Versioned JSON checkpoints of a training run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::MappoAgent;
use super::config::TrainConfig;
use super::trainer::{Optimizers, Trainer};
use crate::config::EnvConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub updates_done: usize,
    pub next_episode: u64,
    pub agent: MappoAgent,
    pub optimizers: Optimizers,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            env: trainer.env_config().clone(),
            train: trainer.train_config().clone(),
            updates_done: trainer.updates_done(),
            next_episode: trainer.next_episode(),
            agent: trainer.agent().clone(),
            optimizers: trainer.optimizers().clone(),
        }
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.env.validate().map_err(|e| bad(e.to_string()))?;
        ckpt.agent.check_against(&ckpt.env).map_err(|e| bad(e.to_string()))?;
        let finite = ckpt.agent.actors().iter().all(|a| a.is_finite()) && ckpt.agent.critic().is_finite();
        if !finite {
            return Err(bad("network parameters are not finite".into()));
        }
        Ok(ckpt)
    }

    /// Continues training from this checkpoint; `train` may raise
    /// `total_updates` or change evaluation settings.
    pub fn into_trainer(self, train: Option<&TrainConfig>) -> Result<Trainer> {
        let train = train.unwrap_or(&self.train);
        Trainer::resume(
            &self.env,
            train,
            self.agent,
            self.optimizers,
            self.updates_done,
            self.next_episode,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (EnvConfig, TrainConfig) {
        let mut env = EnvConfig::standard();
        env.horizon = 16;
        let train = TrainConfig {
            rollout_length: 16,
            hidden_sizes: vec![8],
            total_updates: 2,
            eval_episodes: 1,
            ..TrainConfig::default()
        };
        (env, train)
    }

    #[test]
    fn round_trip_and_resume() {
        let (env, train) = tiny();
        let mut t = Trainer::new(&env, &train).unwrap();
        t.step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = Checkpoint::from_trainer(&t);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let mut resumed = loaded.into_trainer(None).unwrap();
        assert_eq!(resumed.updates_done(), 1);
        resumed.step().unwrap();
        assert_eq!(resumed.updates_done(), 2);
    }

    #[test]
    fn rejects_wrong_version_and_garbage() {
        let (env, train) = tiny();
        let t = Trainer::new(&env, &train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ckpt = Checkpoint::from_trainer(&t);
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let (env, train) = tiny();
        let t = Trainer::new(&env, &train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ckpt = Checkpoint::from_trainer(&t);
        ckpt.env = ckpt.env.with_dispatchers(3);
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
    }
}
