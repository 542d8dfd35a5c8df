//! Fixed query baselines sharing one least-loaded dispatch rule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Controller;
use crate::env::{DispatcherAction, JointAction, KnowledgeSnapshot, QueryResponse, World};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Relies on ACK/NAK feedback only.
    NeverQuery,
    /// Queries each server independently with the given probability.
    RandomQuery(f64),
    /// Queries every server in every slot.
    AlwaysQuery,
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::RandomQuery(p) if !(0.0..=1.0).contains(&p) => {
                Err(Error::config(format!("random query probability {p} outside [0,1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Query bits of one dispatcher for one slot.
pub fn baseline_queries<R: Rng + ?Sized>(kind: BaselineKind, n_servers: usize, rng: &mut R) -> Vec<bool> {
    match kind {
        BaselineKind::NeverQuery => vec![false; n_servers],
        BaselineKind::AlwaysQuery => vec![true; n_servers],
        BaselineKind::RandomQuery(p) => (0..n_servers).map(|_| rng.random::<f64>() < p).collect(),
    }
}

/// Server with the smallest believed queue; ties go to a server believed
/// available, then to the lowest index.
pub fn least_loaded_dispatch(snapshot: &KnowledgeSnapshot) -> usize {
    snapshot
        .servers
        .iter()
        .enumerate()
        .min_by_key(|(k, v)| (v.seen_queue, !v.seen_available, *k))
        .map(|(k, _)| k)
        .expect("snapshot covers at least one server")
}

/// One dispatcher's decision: draw queries, let `respond` answer them within
/// the slot, then dispatch least-loaded on the refreshed view.
pub fn baseline_step<R, F>(
    kind: BaselineKind,
    snapshot: &KnowledgeSnapshot,
    arrival: bool,
    respond: F,
    rng: &mut R,
) -> DispatcherAction
where
    R: Rng + ?Sized,
    F: FnOnce(&[bool]) -> Vec<QueryResponse>,
{
    let queries = baseline_queries(kind, snapshot.len(), rng);
    let dispatch = if arrival {
        let responses = respond(&queries);
        Some(least_loaded_dispatch(&snapshot.overlay(&responses)))
    } else {
        None
    };
    DispatcherAction { queries, dispatch }
}

/// Drives every dispatcher with the same baseline.
#[derive(Debug, Clone)]
pub struct BaselineController {
    kind: BaselineKind,
    rng: ChaCha8Rng,
}

impl BaselineController {
    pub fn new(kind: BaselineKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }
}

impl Controller for BaselineController {
    fn act(&mut self, world: &World) -> Result<JointAction> {
        let n_servers = world.config().n_servers;
        let actions = world
            .knowledge()
            .iter()
            .zip(world.arrivals())
            .enumerate()
            .map(|(n, (snapshot, &arrival))| {
                baseline_step(
                    self.kind,
                    snapshot,
                    arrival,
                    |queries| {
                        let mut single = JointAction::idle(world.config().n_dispatchers, n_servers);
                        single.actions[n].queries = queries.to_vec();
                        world.process_queries(&single)
                    },
                    &mut self.rng,
                )
            })
            .collect();
        Ok(JointAction::new(actions))
    }
}
