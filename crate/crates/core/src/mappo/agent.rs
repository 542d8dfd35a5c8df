//! Decentralized actors and the centralized critic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ActionMode, TrainConfig};
use super::encode::{actor_input_dim, critic_input_dim, encode_observation, encode_state};
use crate::config::EnvConfig;
use crate::env::{DispatcherAction, JointAction, World};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, PolicyHeads};

/// Running mean and variance of critic targets (parallel Welford merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningNorm {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            count: 0.0,
        }
    }
}

impl RunningNorm {
    pub fn update(&mut self, batch: &[f64]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let mean = batch.iter().sum::<f64>() / n;
        let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if self.count == 0.0 {
            self.mean = mean;
            self.var = var;
            self.count = n;
            return;
        }
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-4)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std() + self.mean
    }
}

/// What an actor did in one slot, with everything needed to recompute the
/// log-probability of that action later.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: DispatcherAction,
    pub obs: Vec<f64>,
    /// Observation refreshed with this slot's query answers; only present in
    /// two-phase mode when a job arrived.
    pub dispatch_obs: Option<Vec<f64>>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappoAgent {
    n_dispatchers: usize,
    n_servers: usize,
    parameter_sharing: bool,
    two_phase: bool,
    actors: Vec<DenseNet>,
    critic: DenseNet,
    value_norm: Option<RunningNorm>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl MappoAgent {
    pub fn new<R: Rng + ?Sized>(env: &EnvConfig, train: &TrainConfig, rng: &mut R) -> Result<Self> {
        env.validate()?;
        train.validate()?;
        let actor_sizes = layer_sizes(
            actor_input_dim(env, train.parameter_sharing),
            &train.hidden_sizes,
            2 * env.n_servers,
        );
        let n_actors = if train.parameter_sharing { 1 } else { env.n_dispatchers };
        let actors = (0..n_actors)
            .map(|_| DenseNet::new(&actor_sizes, Activation::Tanh, 0.01, rng))
            .collect::<Result<Vec<_>>>()?;
        let critic = DenseNet::new(
            &layer_sizes(critic_input_dim(env), &train.hidden_sizes, 1),
            Activation::Tanh,
            1.0,
            rng,
        )?;
        Self::from_parts(
            env,
            train.parameter_sharing,
            train.two_phase,
            actors,
            critic,
            train.value_normalization.then(RunningNorm::default),
        )
    }

    /// Assembles an agent, checking every network against the input and
    /// output widths implied by `env`.
    pub fn from_parts(
        env: &EnvConfig,
        parameter_sharing: bool,
        two_phase: bool,
        actors: Vec<DenseNet>,
        critic: DenseNet,
        value_norm: Option<RunningNorm>,
    ) -> Result<Self> {
        let want_actors = if parameter_sharing { 1 } else { env.n_dispatchers };
        if actors.len() != want_actors {
            return Err(Error::Shape {
                expected: want_actors,
                actual: actors.len(),
                context: "number of actor networks",
            });
        }
        let actor_in = actor_input_dim(env, parameter_sharing);
        for actor in &actors {
            if actor.input_dim() != actor_in {
                return Err(Error::Shape {
                    expected: actor_in,
                    actual: actor.input_dim(),
                    context: "actor input width",
                });
            }
            if actor.output_dim() != 2 * env.n_servers {
                return Err(Error::Shape {
                    expected: 2 * env.n_servers,
                    actual: actor.output_dim(),
                    context: "actor output width",
                });
            }
        }
        if critic.input_dim() != critic_input_dim(env) {
            return Err(Error::Shape {
                expected: critic_input_dim(env),
                actual: critic.input_dim(),
                context: "critic input width",
            });
        }
        if critic.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                actual: critic.output_dim(),
                context: "critic output width",
            });
        }
        Ok(Self {
            n_dispatchers: env.n_dispatchers,
            n_servers: env.n_servers,
            parameter_sharing,
            two_phase,
            actors,
            critic,
            value_norm,
        })
    }

    /// Re-runs the construction-time shape checks, e.g. after deserializing.
    pub fn check_against(&self, env: &EnvConfig) -> Result<()> {
        Self::from_parts(
            env,
            self.parameter_sharing,
            self.two_phase,
            self.actors.clone(),
            self.critic.clone(),
            self.value_norm.clone(),
        )
        .map(|_| ())
    }

    pub fn n_dispatchers(&self) -> usize {
        self.n_dispatchers
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn parameter_sharing(&self) -> bool {
        self.parameter_sharing
    }

    pub fn two_phase(&self) -> bool {
        self.two_phase
    }

    pub fn actors(&self) -> &[DenseNet] {
        &self.actors
    }

    pub fn actors_mut(&mut self) -> &mut [DenseNet] {
        &mut self.actors
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    pub fn value_norm(&self) -> Option<&RunningNorm> {
        self.value_norm.as_ref()
    }

    pub fn value_norm_mut(&mut self) -> Option<&mut RunningNorm> {
        self.value_norm.as_mut()
    }

    /// Index of the network that drives `dispatcher`.
    pub fn actor_index(&self, dispatcher: usize) -> usize {
        if self.parameter_sharing {
            0
        } else {
            dispatcher
        }
    }

    pub fn heads(&self, dispatcher: usize, obs: &[f64]) -> Result<PolicyHeads> {
        let out = self.actors[self.actor_index(dispatcher)].forward(obs)?;
        PolicyHeads::from_output(&out, self.n_servers)
    }

    /// Critic estimate of the team return from `world`, in reward units.
    pub fn value(&self, world: &World) -> Result<f64> {
        let raw = self.critic.forward(&encode_state(world))?[0];
        Ok(match &self.value_norm {
            Some(norm) => norm.denormalize(raw),
            None => raw,
        })
    }

    /// Chooses one dispatcher's queries and, on arrival, its target server
    /// from that dispatcher's own knowledge.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        world: &World,
        dispatcher: usize,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Decision> {
        let config = world.config();
        let snapshot = world.observe(dispatcher);
        let obs = encode_observation(snapshot, config, dispatcher, self.parameter_sharing);
        let heads = self.heads(dispatcher, &obs)?;
        let queries = match mode {
            ActionMode::Sampled => heads.sample_queries(rng),
            ActionMode::Greedy => heads.greedy_queries(),
        };
        let mut log_prob = heads.query_terms(&queries)?.log_prob;
        let mut dispatch_obs = None;
        let dispatch = if world.arrivals()[dispatcher] {
            let dispatch_heads = if self.two_phase {
                let mut single = JointAction::idle(config.n_dispatchers, config.n_servers);
                single.actions[dispatcher].queries = queries.clone();
                let refreshed = snapshot.overlay(&world.process_queries(&single));
                let x = encode_observation(&refreshed, config, dispatcher, self.parameter_sharing);
                let h = self.heads(dispatcher, &x)?;
                dispatch_obs = Some(x);
                h
            } else {
                heads
            };
            let k = match mode {
                ActionMode::Sampled => dispatch_heads.sample_dispatch(rng),
                ActionMode::Greedy => dispatch_heads.greedy_dispatch(),
            };
            log_prob += dispatch_heads.dispatch_terms(k)?.log_prob;
            Some(k)
        } else {
            None
        };
        Ok(Decision {
            action: DispatcherAction { queries, dispatch },
            obs,
            dispatch_obs,
            log_prob,
        })
    }

    /// Log-probability of a recorded action under the current parameters.
    pub fn log_prob(
        &self,
        dispatcher: usize,
        obs: &[f64],
        dispatch_obs: Option<&[f64]>,
        action: &DispatcherAction,
    ) -> Result<f64> {
        let heads = self.heads(dispatcher, obs)?;
        let mut lp = heads.query_terms(&action.queries)?.log_prob;
        if let Some(k) = action.dispatch {
            lp += match dispatch_obs {
                Some(x) => self.heads(dispatcher, x)?.dispatch_terms(k)?.log_prob,
                None => heads.dispatch_terms(k)?.log_prob,
            };
        }
        Ok(lp)
    }
}

/// Decentralized execution of a trained agent: each dispatcher acts only on
/// its own knowledge (and, in two-phase mode, its own query answers).
#[derive(Debug, Clone)]
pub struct MappoController<R> {
    agent: MappoAgent,
    mode: ActionMode,
    rng: R,
}

impl<R: Rng> MappoController<R> {
    pub fn new(agent: MappoAgent, mode: ActionMode, rng: R) -> Self {
        Self { agent, mode, rng }
    }

    pub fn agent(&self) -> &MappoAgent {
        &self.agent
    }
}

impl MappoController<rand_chacha::ChaCha8Rng> {
    pub fn seeded(agent: MappoAgent, mode: ActionMode, seed: u64) -> Self {
        use rand::SeedableRng;
        Self::new(agent, mode, rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: Rng> crate::policy::Controller for MappoController<R> {
    fn act(&mut self, world: &World) -> Result<JointAction> {
        if world.config().n_dispatchers != self.agent.n_dispatchers || world.config().n_servers != self.agent.n_servers
        {
            return Err(Error::contract(format!(
                "policy built for N={}, K={} cannot drive N={}, K={}",
                self.agent.n_dispatchers,
                self.agent.n_servers,
                world.config().n_dispatchers,
                world.config().n_servers
            )));
        }
        let actions = (0..self.agent.n_dispatchers)
            .map(|n| Ok(self.agent.decide(world, n, self.mode, &mut self.rng)?.action))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointAction::new(actions))
    }
}
