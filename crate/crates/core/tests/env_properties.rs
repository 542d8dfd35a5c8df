//! Randomized environment properties, each checked against bookkeeping
//! kept independently by the test.

use aoi_dispatch::env::{JointAction, World};
use aoi_dispatch::validation::{random_action, random_config};
use aoi_dispatch::EnvConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(cfg: &EnvConfig, steps: usize, action_seed: u64) -> Vec<(JointAction, aoi_dispatch::env::StepOutcome)> {
    let mut world = World::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    (0..steps)
        .map(|_| {
            let a = random_action(&world, &mut rng);
            let o = world.step(&a).unwrap();
            (a, o)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conservation_and_queue_bounds(seed in any::<u64>(), steps in 1usize..300) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut world = World::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (mut dispatched, mut acks, mut naks) = (0u64, 0u64, 0u64);
        for _ in 0..steps {
            let a = random_action(&world, &mut rng);
            dispatched += a.actions.iter().filter(|d| d.dispatch.is_some()).count() as u64;
            let o = world.step(&a).unwrap();
            acks += o.feedback.iter().filter(|e| e.accepted).count() as u64;
            naks += o.feedback.iter().filter(|e| !e.accepted).count() as u64;
            let mut residual = 0u64;
            for (k, s) in world.servers().iter().enumerate() {
                prop_assert!(s.queue_len() <= cfg.queue_capacity[k]);
                residual += s.queue_len() as u64;
            }
            prop_assert_eq!(dispatched, acks + naks + residual);
        }
    }

    #[test]
    fn aoi_follows_its_recursion(seed in any::<u64>(), steps in 1usize..200) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let (n, k) = (cfg.n_dispatchers, cfg.n_servers);
        let mut world = World::new(&cfg).unwrap();
        let mut expected = vec![vec![1u64; k]; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..steps {
            let a = random_action(&world, &mut rng);
            let o = world.step(&a).unwrap();
            for (d, row) in expected.iter_mut().enumerate() {
                for (s, aoi) in row.iter_mut().enumerate() {
                    let touched = a.actions[d].queries[s]
                        || o.feedback.iter().any(|e| e.dispatcher == d && e.server == s);
                    *aoi = if touched { 1 } else { *aoi + 1 };
                }
            }
            for (d, row) in expected.iter().enumerate() {
                let seen: Vec<u64> = world.observe(d).servers.iter().map(|v| v.aoi).collect();
                prop_assert_eq!(&seen, row);
            }
        }
    }

    #[test]
    fn rewards_decompose(seed in any::<u64>()) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        for (a, o) in run(&cfg, 100, seed ^ 3) {
            let acks = o.feedback.iter().filter(|e| e.accepted).count() as f64;
            let queries: usize = a.actions.iter().map(|d| d.queries.iter().filter(|&&q| q).count()).sum();
            let team = acks - cfg.query_cost * queries as f64;
            prop_assert!((o.rewards.team - team).abs() < 1e-9);
            let sum: f64 = o.rewards.per_dispatcher.iter().sum();
            prop_assert!((o.rewards.team - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(run(&cfg, 80, seed), run(&cfg, 80, seed));
    }

    #[test]
    fn world_randomness_is_independent_of_actions(seed in any::<u64>()) {
        // Same world seed, different action streams: availability and
        // arrival paths must coincide slot by slot.
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut w1 = World::new(&cfg).unwrap();
        let mut w2 = World::new(&cfg).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a1 = random_action(&w1, &mut r1);
            let a2 = random_action(&w2, &mut r2);
            w1.step(&a1).unwrap();
            w2.step(&a2).unwrap();
            let x1: Vec<bool> = w1.servers().iter().map(|s| s.available).collect();
            let x2: Vec<bool> = w2.servers().iter().map(|s| s.available).collect();
            prop_assert_eq!(x1, x2);
            prop_assert_eq!(w1.arrivals(), w2.arrivals());
        }
    }
}

#[test]
fn invalid_actions_are_contract_errors() {
    let cfg = EnvConfig::standard();
    let mut world = World::new(&cfg).unwrap();
    let mut bad = JointAction::idle(cfg.n_dispatchers, cfg.n_servers);
    bad.actions[0].dispatch = Some(cfg.n_servers);
    assert!(world.step(&bad).is_err());
    let short = JointAction::idle(cfg.n_dispatchers - 1, cfg.n_servers);
    assert!(world.step(&short).is_err());
    assert_eq!(world.slot(), 0);
}
