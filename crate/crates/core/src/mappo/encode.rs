//! Network input encodings.
//!
//! Actor, per server: `[seen_available, seen_queue / Q_k, min(Δ, cap) / cap]`,
//! followed by a one-hot dispatcher id when parameters are shared.
//! Critic: true availability (K), true queue / Q_k (K), then the full AoI
//! matrix (N x K, row per dispatcher) normalised like the actor's AoI.

use crate::config::EnvConfig;
use crate::env::{KnowledgeSnapshot, World};

pub fn actor_input_dim(config: &EnvConfig, parameter_sharing: bool) -> usize {
    3 * config.n_servers + if parameter_sharing { config.n_dispatchers } else { 0 }
}

pub fn critic_input_dim(config: &EnvConfig) -> usize {
    2 * config.n_servers + config.n_dispatchers * config.n_servers
}

fn normalized_aoi(aoi: u64, cap: u32) -> f64 {
    aoi.min(cap as u64) as f64 / cap as f64
}

pub fn encode_observation(
    snapshot: &KnowledgeSnapshot,
    config: &EnvConfig,
    dispatcher: usize,
    parameter_sharing: bool,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(actor_input_dim(config, parameter_sharing));
    for (k, view) in snapshot.servers.iter().enumerate() {
        x.push(if view.seen_available { 1.0 } else { 0.0 });
        x.push(view.seen_queue as f64 / config.queue_capacity[k] as f64);
        x.push(normalized_aoi(view.aoi, config.aoi_cap));
    }
    if parameter_sharing {
        x.extend((0..config.n_dispatchers).map(|n| if n == dispatcher { 1.0 } else { 0.0 }));
    }
    x
}

pub fn encode_state(world: &World) -> Vec<f64> {
    let config = world.config();
    let mut x = Vec::with_capacity(critic_input_dim(config));
    x.extend(world.servers().iter().map(|s| if s.available { 1.0 } else { 0.0 }));
    x.extend(
        world
            .servers()
            .iter()
            .zip(&config.queue_capacity)
            .map(|(s, &cap)| s.queue_len() as f64 / cap as f64),
    );
    for snapshot in world.knowledge() {
        x.extend(snapshot.servers.iter().map(|v| normalized_aoi(v.aoi, config.aoi_cap)));
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ServerView;

    #[test]
    fn cold_start_observation() {
        let cfg = EnvConfig::standard();
        let world = World::new(&cfg).unwrap();
        let x = encode_observation(world.observe(2), &cfg, 2, true);
        assert_eq!(x.len(), actor_input_dim(&cfg, true));
        assert_eq!(&x[..3], &[1.0, 0.0, 1.0 / 64.0]);
        assert_eq!(&x[15..], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(encode_observation(world.observe(2), &cfg, 2, false).len(), 15);
    }

    #[test]
    fn aoi_is_capped_in_encoding_only() {
        let cfg = EnvConfig::standard();
        let mut world = World::new(&cfg).unwrap();
        world.set_view(
            0,
            1,
            ServerView {
                seen_available: false,
                seen_queue: 3,
                aoi: 500,
            },
        );
        let x = encode_observation(world.observe(0), &cfg, 0, false);
        assert_eq!(&x[3..6], &[0.0, 1.0, 1.0]);
        assert_eq!(world.observe(0).servers[1].aoi, 500);
    }

    #[test]
    fn state_has_full_aoi_matrix() {
        let cfg = EnvConfig::standard().with_dispatchers(3);
        let world = World::new(&cfg).unwrap();
        let s = encode_state(&world);
        assert_eq!(s.len(), critic_input_dim(&cfg));
        assert_eq!(s.len(), 2 * 5 + 3 * 5);
        assert!(s[10..].iter().all(|&v| v == 1.0 / 64.0));
    }
}
