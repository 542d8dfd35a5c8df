//! Rollout collection, the MAPPO update and the training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{MappoAgent, MappoController};
use super::buffer::{ActorRecord, CriticRecord, RolloutBuffer};
use super::config::{ActionMode, TrainConfig};
use super::encode::encode_state;
use super::gae::normalize;
use super::loss::{clipped_surrogate, total_loss, value_loss};
use crate::config::EnvConfig;
use crate::env::{JointAction, World};
use crate::error::Result;
use crate::eval::{mix_seed, run_episodes, Metrics};
use crate::nn::{Adam, HeadTerms, PolicyHeads, StepStatus, Tape};

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// A training environment that restarts after `horizon` slots, each episode
/// from its own derived seed.
#[derive(Debug, Clone)]
pub struct EnvRunner {
    config: EnvConfig,
    seed: u64,
    episode: u64,
    world: World,
}

impl EnvRunner {
    pub fn new(config: &EnvConfig, seed: u64, episode: u64) -> Result<Self> {
        let world = World::with_seed(config, mix_seed(seed, episode))?;
        Ok(Self {
            config: config.clone(),
            seed,
            episode,
            world,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    fn episode_over(&self) -> bool {
        self.world.slot() >= self.config.horizon as u64
    }

    fn reset(&mut self) -> Result<()> {
        self.episode += 1;
        self.world = World::with_seed(&self.config, mix_seed(self.seed, self.episode))?;
        Ok(())
    }
}

/// Steps `length` slots with sampled actions, recording N actor records
/// and one critic record per slot. The final slot (and every slot that
/// truncates an episode) carries the critic's value of the next state as
/// its bootstrap.
pub fn collect_rollout<R: Rng + ?Sized>(
    runner: &mut EnvRunner,
    agent: &MappoAgent,
    length: usize,
    rng: &mut R,
) -> Result<RolloutBuffer> {
    let mut buffer = RolloutBuffer::new();
    for slot in 0..length {
        let world = runner.world();
        let state = encode_state(world);
        let value = agent.value(world)?;
        let mut actions = Vec::with_capacity(agent.n_dispatchers());
        for n in 0..agent.n_dispatchers() {
            let d = agent.decide(world, n, ActionMode::Sampled, rng)?;
            actions.push(d.action.clone());
            buffer.actors.push(ActorRecord {
                slot,
                dispatcher: n,
                obs: d.obs,
                dispatch_obs: d.dispatch_obs,
                action: d.action,
                log_prob: d.log_prob,
            });
        }
        let outcome = runner.world.step(&JointAction::new(actions))?;
        let truncated = runner.episode_over();
        let bootstrap = if truncated || slot + 1 == length {
            Some(agent.value(runner.world())?)
        } else {
            None
        };
        buffer.critic.push(CriticRecord {
            state,
            reward: outcome.team_reward(),
            value,
            bootstrap,
        });
        if truncated {
            runner.reset()?;
        }
    }
    Ok(buffer)
}

/// Diagnostics from one call to [`mappo_update`]. Averages are over the
/// minibatches that were applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean probability ratio on the very first minibatch (1 up to rounding).
    pub first_mean_ratio: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Clipped surrogate objective (to be maximised).
    pub policy_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub minibatches: usize,
    pub skipped_minibatches: usize,
    pub excluded_samples: usize,
}

/// Adam states for every network of an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actors: Vec<Adam>,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(agent: &MappoAgent, train: &TrainConfig) -> Self {
        Self {
            actors: agent
                .actors()
                .iter()
                .map(|a| Adam::new(a.num_params(), train.learning_rate, Some(train.max_grad_norm)))
                .collect(),
            critic: Adam::new(
                agent.critic().num_params(),
                train.critic_learning_rate,
                Some(train.max_grad_norm),
            ),
        }
    }
}

struct Forward {
    tape: Tape,
    dispatch_tape: Option<Tape>,
    query: HeadTerms,
    dispatch: Option<HeadTerms>,
}

impl Forward {
    fn log_prob(&self) -> f64 {
        self.query.log_prob + self.dispatch.as_ref().map_or(0.0, |d| d.log_prob)
    }

    fn entropy(&self) -> f64 {
        self.query.entropy + self.dispatch.as_ref().map_or(0.0, |d| d.entropy)
    }
}

fn forward_record(agent: &MappoAgent, rec: &ActorRecord) -> Result<Forward> {
    let net = &agent.actors()[agent.actor_index(rec.dispatcher)];
    let k = agent.n_servers();
    let mut tape = Tape::new();
    let heads = PolicyHeads::from_output(net.forward_record(&rec.obs, &mut tape)?, k)?;
    let query = heads.query_terms(&rec.action.queries)?;
    let mut dispatch_tape = None;
    let dispatch = match (rec.action.dispatch, &rec.dispatch_obs) {
        (None, _) => None,
        (Some(choice), None) => Some(heads.dispatch_terms(choice)?),
        (Some(choice), Some(x)) => {
            let mut t = Tape::new();
            let h = PolicyHeads::from_output(net.forward_record(x, &mut t)?, k)?;
            dispatch_tape = Some(t);
            Some(h.dispatch_terms(choice)?)
        }
    };
    Ok(Forward {
        tape,
        dispatch_tape,
        query,
        dispatch,
    })
}

/// Splits `0..len` into `count` nearly equal shuffled chunks.
fn minibatches<R: Rng + ?Sized>(len: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let base = len / count;
    let extra = len % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let size = base + usize::from(i < extra);
        out.push(idx[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Runs `epochs_per_update` passes of shuffled minibatches over the buffer,
/// updating every actor with the clipped surrogate plus entropy bonus and
/// the critic with the value loss. Minibatches are drawn over slots; each
/// slot contributes all N actor records.
pub fn mappo_update<R: Rng + ?Sized>(
    agent: &mut MappoAgent,
    optimizers: &mut Optimizers,
    buffer: &RolloutBuffer,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if !buffer.has_advantages() {
        return Err(crate::error::Error::contract(
            "mappo_update needs a rollout with advantages",
        ));
    }
    let mut advantages = buffer.advantages.clone();
    if train.normalize_advantages {
        normalize(&mut advantages);
    }
    let targets: Vec<f64> = match agent.value_norm_mut() {
        Some(norm) => {
            norm.update(&buffer.returns);
            buffer.returns.iter().map(|&r| norm.normalize(r)).collect()
        }
        None => buffer.returns.clone(),
    };
    let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); buffer.len()];
    for (i, rec) in buffer.actors.iter().enumerate() {
        by_slot[rec.slot].push(i);
    }

    let mut stats = UpdateStats::default();
    let mut first = true;
    for _ in 0..train.epochs_per_update {
        for batch in minibatches(buffer.len(), train.minibatch_count, rng) {
            let records: Vec<usize> = batch.iter().flat_map(|&t| by_slot[t].iter().copied()).collect();
            let forwards = records
                .iter()
                .map(|&i| forward_record(agent, &buffer.actors[i]))
                .collect::<Result<Vec<_>>>()?;
            let new_lp: Vec<f64> = forwards.iter().map(Forward::log_prob).collect();
            let old_lp: Vec<f64> = records.iter().map(|&i| buffer.actors[i].log_prob).collect();
            let adv: Vec<f64> = records.iter().map(|&i| advantages[buffer.actors[i].slot]).collect();
            let surrogate = clipped_surrogate(&new_lp, &old_lp, &adv, train.clip_epsilon);
            let m = records.len() as f64;
            let entropy = forwards.iter().map(Forward::entropy).sum::<f64>() / m;

            let mut critic_tapes = Vec::with_capacity(batch.len());
            let mut preds = Vec::with_capacity(batch.len());
            for &t in &batch {
                let mut tape = Tape::new();
                preds.push(agent.critic().forward_record(&buffer.critic[t].state, &mut tape)?[0]);
                critic_tapes.push(tape);
            }
            let batch_targets: Vec<f64> = batch.iter().map(|&t| targets[t]).collect();
            let v_loss = value_loss(&preds, &batch_targets);
            let total = total_loss(
                surrogate.objective,
                v_loss,
                entropy,
                train.value_coef,
                train.entropy_coef,
            );

            if first {
                stats.first_mean_ratio = surrogate.mean_ratio;
                first = false;
            }
            stats.excluded_samples += surrogate.excluded;
            if !total.is_finite() {
                stats.skipped_minibatches += 1;
                continue;
            }

            let k = agent.n_servers();
            let mut actor_grads: Vec<Vec<f64>> = agent.actors().iter().map(|a| vec![0.0; a.num_params()]).collect();
            for (j, (&i, f)) in records.iter().zip(&forwards).enumerate() {
                let net_idx = agent.actor_index(buffer.actors[i].dispatcher);
                let net = &agent.actors()[net_idx];
                let g = surrogate.d_log_prob[j];
                let coef_h = train.entropy_coef / m;
                // d(loss)/d(output) for loss = -objective - c_e * mean entropy
                let up = |t: &HeadTerms| -> Vec<f64> {
                    t.d_log_prob
                        .iter()
                        .zip(&t.d_entropy)
                        .map(|(dl, dh)| -g * dl - coef_h * dh)
                        .collect()
                };
                let mut upstream = up(&f.query);
                upstream.resize(2 * k, 0.0);
                match (&f.dispatch, &f.dispatch_tape) {
                    (Some(d), None) => upstream[k..].copy_from_slice(&up(d)),
                    (Some(d), Some(tape)) => {
                        let mut second = vec![0.0; k];
                        second.extend(up(d));
                        net.backward(tape, &second, &mut actor_grads[net_idx])?;
                    }
                    (None, _) => {}
                }
                net.backward(&f.tape, &upstream, &mut actor_grads[net_idx])?;
            }
            let mut critic_grads = vec![0.0; agent.critic().num_params()];
            let b = batch.len() as f64;
            for ((tape, &p), &y) in critic_tapes.iter().zip(&preds).zip(&batch_targets) {
                let up = [train.value_coef * 2.0 * (p - y) / b];
                agent.critic().backward(tape, &up, &mut critic_grads)?;
            }

            let mut applied = true;
            for (idx, grads) in actor_grads.iter().enumerate() {
                let status = optimizers.actors[idx].step(agent.actors_mut()[idx].params_mut(), grads)?;
                applied &= !matches!(status, StepStatus::SkippedNonFinite);
            }
            let status = optimizers.critic.step(agent.critic_mut().params_mut(), &critic_grads)?;
            applied &= !matches!(status, StepStatus::SkippedNonFinite);
            if !applied {
                stats.skipped_minibatches += 1;
                continue;
            }
            stats.minibatches += 1;
            stats.mean_ratio += surrogate.mean_ratio;
            stats.clip_fraction += surrogate.clip_fraction;
            stats.policy_objective += surrogate.objective;
            stats.value_loss += v_loss;
            stats.entropy += entropy;
            stats.total_loss += total;
        }
    }
    if stats.minibatches > 0 {
        let n = stats.minibatches as f64;
        stats.mean_ratio /= n;
        stats.clip_fraction /= n;
        stats.policy_objective /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.total_loss /= n;
    }
    Ok(stats)
}

/// Average per-slot team reward (and the other rates) of decentralized
/// execution over `episodes` episodes.
pub fn evaluate(agent: &MappoAgent, env: &EnvConfig, episodes: usize, seed: u64, mode: ActionMode) -> Result<Metrics> {
    agent.check_against(env)?;
    run_episodes(env, episodes, seed, |s| {
        Ok(MappoController::seeded(agent.clone(), mode, s))
    })
}

/// One line of the training progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub update: usize,
    pub slots: u64,
    /// Mean team reward per slot over this update's rollout.
    pub rollout_reward: f64,
    #[serde(flatten)]
    pub stats: UpdateStats,
    /// Evaluation reward per slot, on updates where one was run.
    pub eval_reward: Option<f64>,
}

/// Owns everything that changes during training.
#[derive(Debug, Clone)]
pub struct Trainer {
    env: EnvConfig,
    train: TrainConfig,
    agent: MappoAgent,
    optimizers: Optimizers,
    runner: EnvRunner,
    updates_done: usize,
}

impl Trainer {
    pub fn new(env: &EnvConfig, train: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, INIT_STREAM));
        let agent = MappoAgent::new(env, train, &mut rng)?;
        let optimizers = Optimizers::new(&agent, train);
        Ok(Self {
            runner: EnvRunner::new(env, mix_seed(train.seed, ENV_STREAM), 0)?,
            env: env.clone(),
            train: train.clone(),
            agent,
            optimizers,
            updates_done: 0,
        })
    }

    /// Rebuilds a trainer from saved state. The environment restarts at a
    /// fresh episode.
    pub fn resume(
        env: &EnvConfig,
        train: &TrainConfig,
        agent: MappoAgent,
        optimizers: Optimizers,
        updates_done: usize,
        episode: u64,
    ) -> Result<Self> {
        agent.check_against(env)?;
        Ok(Self {
            runner: EnvRunner::new(env, mix_seed(train.seed, ENV_STREAM), episode)?,
            env: env.clone(),
            train: train.clone(),
            agent,
            optimizers,
            updates_done,
        })
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn agent(&self) -> &MappoAgent {
        &self.agent
    }

    pub fn optimizers(&self) -> &Optimizers {
        &self.optimizers
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    /// Episode index the next rollout starts from, for resuming.
    pub fn next_episode(&self) -> u64 {
        self.runner.episode() + 1
    }

    fn policy_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(
            mix_seed(self.train.seed, POLICY_STREAM),
            self.updates_done as u64,
        ))
    }

    /// Collects one rollout, computes advantages and applies one update.
    pub fn step(&mut self) -> Result<ProgressRecord> {
        let mut rng = self.policy_rng();
        let mut buffer = collect_rollout(&mut self.runner, &self.agent, self.train.rollout_length, &mut rng)?;
        buffer.compute_advantages(self.env.discount, self.train.gae_lambda)?;
        let stats = mappo_update(&mut self.agent, &mut self.optimizers, &buffer, &self.train, &mut rng)?;
        self.updates_done += 1;
        let rollout_reward = buffer.critic.iter().map(|c| c.reward).sum::<f64>() / buffer.len() as f64;
        Ok(ProgressRecord {
            update: self.updates_done,
            slots: (self.updates_done * self.train.rollout_length) as u64,
            rollout_reward,
            stats,
            eval_reward: None,
        })
    }

    /// Evaluation with a fixed seed, so successive evaluations share their
    /// environment randomness.
    pub fn evaluate(&self) -> Result<Metrics> {
        evaluate(
            &self.agent,
            &self.env,
            self.train.eval_episodes,
            mix_seed(self.train.seed, EVAL_STREAM),
            self.train.eval_mode,
        )
    }

    /// Trains until `total_updates`, evaluating every `eval_interval`
    /// updates (and after the last). `on_progress` receives each record and
    /// is told when an evaluation point (a checkpoint opportunity) is reached.
    pub fn run<F>(&mut self, mut on_progress: F) -> Result<()>
    where
        F: FnMut(&Trainer, &ProgressRecord, bool) -> Result<()>,
    {
        while self.updates_done < self.train.total_updates {
            let mut record = self.step()?;
            let at_eval = (self.train.eval_interval > 0 && self.updates_done.is_multiple_of(self.train.eval_interval))
                || self.updates_done == self.train.total_updates;
            if at_eval {
                record.eval_reward = Some(self.evaluate()?.reward_per_slot());
            }
            on_progress(self, &record, at_eval)?;
        }
        Ok(())
    }
}
