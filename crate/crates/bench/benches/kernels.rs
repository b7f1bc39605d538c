use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use trafficgrad_bench::{actor, batch, critic, network_b, uniform};
use trafficgrad_core::{durations_from_raw, generate_network_a, DdpgAgent, DdpgConfig, Mode, PhaseLayout, SimState};

fn simulation(c: &mut Criterion) {
    let a = generate_network_a();
    let a_plan = PhaseLayout::from_scenario(&a).base_durations().to_vec();
    c.bench_function("sim/network_a_episode_step", |b| {
        b.iter_batched(
            || SimState::new(&a, 1),
            |mut sim| {
                sim.apply_phase_durations(&a_plan).unwrap();
                black_box(sim.run_episode_step())
            },
            BatchSize::SmallInput,
        )
    });
    let f = network_b();
    let b_plan = f.layout.base_durations().to_vec();
    c.bench_function("sim/network_b_episode_step", |b| {
        b.iter_batched(
            || SimState::new(&f.scenario, 1),
            |mut sim| {
                sim.apply_phase_durations(&b_plan).unwrap();
                black_box(sim.run_episode_step())
            },
            BatchSize::SmallInput,
        )
    });
}

fn networks(c: &mut Criterion) {
    let f = network_b();
    let mut net = actor(&f, 3);
    let single = uniform(1, f.nd, 4);
    let x = uniform(64, f.nd, 5);
    let upstream = uniform(64, f.np, 6);
    c.bench_function("nn/actor_predict_1", |b| b.iter(|| black_box(net.predict(&single).unwrap())));
    c.bench_function("nn/actor_forward_backward_64", |b| {
        b.iter(|| {
            let (_, cache) = net.forward(&x, Mode::Train).unwrap();
            black_box(net.backward(&cache.unwrap(), &upstream).unwrap())
        })
    });
    let mut q = critic(&f, 7);
    let xa = uniform(64, f.nd + f.np, 8);
    let gq = uniform(64, f.nd, 9);
    c.bench_function("nn/critic_forward_backward_64", |b| {
        b.iter(|| {
            let (_, cache) = q.forward(&xa, Mode::Train).unwrap();
            black_box(q.backward(&cache.unwrap(), &gq).unwrap())
        })
    });
}

fn agent(c: &mut Criterion) {
    let f = network_b();
    let mut agent = DdpgAgent::new(f.nd, f.layout.clone(), DdpgConfig::default(), 11).unwrap();
    let minibatch = batch(&f, 64, 12);
    c.bench_function("ddpg/train_on_batch_64", |b| {
        b.iter(|| black_box(agent.train_on_batch(&minibatch, 0.9).unwrap()))
    });
    let raw = uniform(1, f.np, 13).into_raw_vec_and_offset().0;
    c.bench_function("control/durations_from_raw", |b| {
        b.iter(|| black_box(durations_from_raw(&raw, &f.layout).unwrap()))
    });
}

criterion_group!(benches, simulation, networks, agent);
criterion_main!(benches);
