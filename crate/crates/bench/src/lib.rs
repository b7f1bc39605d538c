//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafficgrad_core::ddpg::{actor_layers, critic_layers, Batch};
use trafficgrad_core::{generate_network_b, Mlp, PhaseLayout, Scenario, Transition};

pub struct Fixture {
    pub scenario: Scenario,
    pub layout: PhaseLayout,
    pub nd: usize,
    pub np: usize,
}

/// Network B sizes: the larger of the two built-in networks.
pub fn network_b() -> Fixture {
    let scenario = generate_network_b();
    let layout = PhaseLayout::from_scenario(&scenario);
    let (nd, np) = (scenario.n_detectors(), scenario.n_phases());
    Fixture { scenario, layout, nd, np }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn actor(f: &Fixture, seed: u64) -> Mlp {
    Mlp::new(f.nd, &actor_layers(f.nd, f.np, None), &mut rng(seed))
}

pub fn critic(f: &Fixture, seed: u64) -> Mlp {
    Mlp::new(f.nd + f.np, &critic_layers(f.nd, f.np, None), &mut rng(seed))
}

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(0.0..1.0))
}

pub fn batch(f: &Fixture, size: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let mut v = |n: usize| (0..n).map(|_| r.random_range(0.0..1.0)).collect::<Vec<f64>>();
    let items: Vec<Transition> = (0..size)
        .map(|_| Transition {
            state: v(f.nd),
            action: v(f.np),
            reward: v(f.nd),
            next_state: v(f.nd),
        })
        .collect();
    Batch::from_transitions(&items)
}
