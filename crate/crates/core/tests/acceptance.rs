//! Acceptance criteria. Each test prints one `criterion N ...: PASS|FAIL`
//! line before asserting.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trafficgrad_core::ddpg::{Batch, DdpgAgent, OuNoise};
use trafficgrad_core::harness::report::trial_log_path;
use trafficgrad_core::harness::{run_experiment_on, TrialStatus};
use trafficgrad_core::microsim::DetectorObservation;
use trafficgrad_core::qlearn::QTable;
use trafficgrad_core::*;

fn verdict(n: u32, name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn preset(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("preset parses")
}

const A_DDPG: &str = include_str!("../../../configs/network_a_ddpg.toml");
const A_QLEARN: &str = include_str!("../../../configs/network_a_qlearn.toml");
const A_RANDOM: &str = include_str!("../../../configs/network_a_random.toml");
const B_DDPG: &str = include_str!("../../../configs/network_b_ddpg.toml");
const B_RANDOM: &str = include_str!("../../../configs/network_b_random.toml");

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (m, var.sqrt())
}

fn random_net(rng: &mut ChaCha8Rng, net_index: usize) -> (Mlp, usize) {
    let activations = [Activation::LeakyRelu, Activation::Relu, Activation::Linear];
    let input_dim = rng.random_range(1..=8);
    let n_dense = rng.random_range(2..=4);
    // Every other net carries a batch-norm layer after a random dense layer.
    let bn_after = net_index.is_multiple_of(2).then(|| rng.random_range(0..n_dense));
    let mut specs = Vec::new();
    for i in 0..n_dense {
        specs.push(LayerSpec::Dense {
            units: rng.random_range(1..=32),
            activation: activations[(net_index + i) % 3],
        });
        if bn_after == Some(i) {
            specs.push(LayerSpec::BatchNorm);
        }
    }
    let mut net = Mlp::new(input_dim, &specs, rng);
    // He weights plus jitter, so biases and batch-norm scales are non-trivial.
    let params: Vec<f64> = net.params_flat().iter().map(|p| p + rng.random_range(-0.2..0.2)).collect();
    net.set_params_flat(&params).unwrap();
    (net, input_dim)
}

/// Relative error with a floor: gradients below `GRAD_FLOOR` in magnitude
/// (for example biases feeding a batch-norm layer, which are exactly zero)
/// are held to an absolute error of `1e-4 · GRAD_FLOOR`, about the round-off
/// level of the difference quotient.
const GRAD_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

#[test]
fn criterion_1_gradient_check() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut with_bn = 0;
    let mut tiny = 0usize;
    for k in 0..20 {
        let (net, input_dim) = random_net(&mut rng, k);
        with_bn += net.layers().iter().filter(|l| matches!(l, nn::Layer::BatchNorm(_))).count();
        let batch = rng.random_range(3..=6);
        let x = Array2::from_shape_fn((batch, input_dim), |_| rng.sample::<f64, _>(StandardNormal));
        let weights = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.random_range(-1.0..1.0));
        let loss = |net: &Mlp, x: &Array2<f64>| {
            let mut probe = net.clone();
            let (y, _) = probe.forward_train(x).unwrap();
            (&y * &weights).sum()
        };

        let mut analytic = net.clone();
        let (_, cache) = analytic.forward_train(&x).unwrap();
        let (input_grad, _) = analytic.backward(&cache, &weights).unwrap();
        let grads = analytic.grads_flat();
        let params = net.params_flat();
        for i in 0..params.len() {
            let mut p = params.clone();
            let mut probe = net.clone();
            p[i] = params[i] + h;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe, &x);
            p[i] = params[i] - h;
            probe.set_params_flat(&p).unwrap();
            let down = loss(&probe, &x);
            let e = rel_err(grads[i], (up - down) / (2.0 * h));
            tiny += usize::from(grads[i].abs().max(((up - down) / (2.0 * h)).abs()) < GRAD_FLOOR);
            worst = worst.max(e);
            checked += 1;
        }
        for ((r, c), &g) in input_grad.indexed_iter() {
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let up = loss(&net, &xp);
            xp[[r, c]] -= 2.0 * h;
            let down = loss(&net, &xp);
            tiny += usize::from(g.abs().max(((up - down) / (2.0 * h)).abs()) < GRAD_FLOOR);
            worst = worst.max(rel_err(g, (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst <= 1e-4 && secs < 60.0 && with_bn >= 10,
        format!("{checked} gradients over 20 nets ({with_bn} batch-norm layers, {tiny} below {GRAD_FLOOR:e}), max relative error {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_2_cycle_preservation() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_cycle = 0.0f64;
    let mut floor_violations = 0;
    for scenario in [generate_network_a(), generate_network_b()] {
        let layout = PhaseLayout::from_scenario(&scenario);
        for draw in 0..10_000 {
            // Mix ordinary and extreme magnitudes.
            let scale = [0.1, 1.0, 10.0, 100.0][draw % 4];
            let raw: Vec<f64> = (0..layout.n_phases())
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let d = durations_from_raw(&raw, &layout).unwrap();
            for (g, ix) in scenario.intersections.iter().enumerate() {
                let range = layout.groups()[g].clone();
                let cycle: f64 = d[range].iter().sum::<f64>() + ix.phases.len() as f64 * ix.interphase;
                worst_cycle = worst_cycle.max((cycle - ix.cycle()).abs());
            }
            let base = layout.base_durations();
            floor_violations += d.iter().zip(base).filter(|(d, b)| **d < 0.2 * **b).count();
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        2,
        "cycle preservation",
        worst_cycle <= 1e-9 && floor_violations == 0 && secs < 10.0,
        format!("2x10^4 draws, max cycle error {worst_cycle:.2e} s, {floor_violations} floor violations, {secs:.1}s"),
    );
}

#[test]
fn criterion_3_identity_control_zero_reward() {
    let started = Instant::now();
    let scenario = generate_network_a();
    let layout = PhaseLayout::from_scenario(&scenario);
    let seed = 42;
    let baseline = compute_baseline(&scenario, seed);
    let mut sim = SimState::new(&scenario, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonzero = 0;
    let mut steps = 0;
    let mut vehicles = 0;
    for step in &baseline {
        // A different group-constant output every step.
        let mut raw = vec![0.0; layout.n_phases()];
        for g in layout.groups() {
            let c: f64 = rng.random_range(-5.0..5.0);
            raw[g.clone()].fill(c);
        }
        sim.apply_phase_durations(&durations_from_raw(&raw, &layout).unwrap()).unwrap();
        let obs = sim.run_episode_step();
        let r = reward(&obs, step).unwrap();
        nonzero += r.iter().filter(|v| **v != 0.0).count();
        vehicles += obs.detectors.iter().map(|d| d.count).sum::<u32>();
        steps += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        3,
        "identity-control zero reward",
        steps == 30 && nonzero == 0 && vehicles > 0 && secs < 30.0,
        format!("{steps} steps, {vehicles} detector counts, {nonzero} nonzero reward components, {secs:.1}s"),
    );
}

#[test]
fn criterion_4_reward_arithmetic() {
    let obs = |count, speed_score| EpisodeStepObservation {
        clock: 120.0,
        detectors: vec![DetectorObservation {
            count,
            speed_score,
            occupancy: 0.0,
        }],
    };
    let r = reward(&obs(10, 0.6), &obs(10, 0.5)).unwrap();
    verdict(
        4,
        "reward arithmetic",
        r == vec![0.02] && REWARD_ALPHA == 1.0 / 50.0,
        format!("reward = {:?}, alpha = {}", r[0], REWARD_ALPHA),
    );
}

#[test]
fn criterion_5_determinism() {
    let started = Instant::now();
    let scenario = generate_network_a();
    let mut config = preset(A_DDPG);
    config.trials = 1;
    config.master_seed = 11;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut logs = Vec::new();
    for dir in &dirs {
        config.out_dir = Some(dir.path().to_path_buf());
        run_experiment_on(&scenario, &config).unwrap();
        logs.push((
            std::fs::read(trial_log_path(dir.path(), 0)).unwrap(),
            std::fs::read(dir.path().join("aggregate.csv")).unwrap(),
        ));
    }
    let rows = String::from_utf8_lossy(&logs[0].0).lines().count() - 1;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        5,
        "determinism",
        logs[0] == logs[1] && rows == config.episodes,
        format!("two {}-episode network A DDPG trials, {} log bytes, identical = {}, {secs:.1}s", rows, logs[0].0.len(), logs[0] == logs[1]),
    );
}

#[test]
fn criterion_6_network_a_reproduction() {
    let started = Instant::now();
    let scenario = generate_network_a();
    let rewards = |text: &str, seed: u64| -> Vec<f64> {
        let mut config = preset(text);
        config.trials = 1;
        config.master_seed = seed;
        let summary = run_experiment_on(&scenario, &config).unwrap();
        assert_eq!(summary.trials[0].status, TrialStatus::Completed);
        summary.trials[0].log.iter().map(|l| l.mean_reward).collect()
    };
    let (mut beats_random, mut steadier) = (0, 0);
    let mut detail = Vec::new();
    for seed in 0..5 {
        let ddpg = rewards(A_DDPG, seed);
        let qlearn = rewards(A_QLEARN, seed);
        let random = rewards(A_RANDOM, seed);
        assert_eq!(ddpg.len(), 200);
        let (ddpg_mean, ddpg_sd) = mean_sd(&ddpg[180..]);
        let (_, q_sd) = mean_sd(&qlearn[180..]);
        let (random_mean, _) = mean_sd(&random);
        beats_random += usize::from(ddpg_mean > random_mean);
        steadier += usize::from(ddpg_sd < q_sd);
        detail.push(format!(
            "seed {seed}: ddpg {ddpg_mean:.4} vs random {random_mean:.4}, sd {ddpg_sd:.4} vs {q_sd:.4}"
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    for line in &detail {
        println!("  {line}");
    }
    verdict(
        6,
        "network A reproduction",
        beats_random >= 4 && steadier >= 3,
        format!("(a) {beats_random}/5 seeds above random, (b) {steadier}/5 seeds steadier than Q-learning, {secs:.0}s"),
    );
}

#[test]
fn criterion_7_qlearning_value_iteration() {
    // Deterministic MDP: next[s][a], reward[s][a].
    let next = [[0usize, 1], [0, 1]];
    let rewards = [[1.0, 0.0], [-0.5, 2.0]];
    let gamma = 0.9;

    let mut v = [0.0f64; 2];
    let mut q_star = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        for s in 0..2 {
            for a in 0..2 {
                q_star[s][a] = rewards[s][a] + gamma * v[next[s][a]];
            }
        }
        v = [q_star[0][0].max(q_star[0][1]), q_star[1][0].max(q_star[1][1])];
    }

    let mut table = QTable::new(2, 2, 0.1, gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = 0;
    for _ in 0..200_000 {
        let a = rng.random_range(0..2);
        table.update(s, a, rewards[s][a], next[s][a]);
        s = next[s][a];
        if rng.random::<f64>() < 0.1 {
            s = rng.random_range(0..2);
        }
    }
    let worst = (0..2)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .map(|(s, a)| (table.get(s, a) - q_star[s][a]).abs())
        .fold(0.0, f64::max);
    verdict(
        7,
        "Q-learning vs value iteration",
        worst <= 1e-6,
        format!("max |Q - Q*| = {worst:.2e}"),
    );
}

/// Scalar-reward DDPG written against the network kernels directly.
struct ScalarDdpg {
    actor: Mlp,
    critic: Mlp,
    target_actor: Mlp,
    target_critic: Mlp,
}

impl ScalarDdpg {
    fn update(&mut self, batch: &Batch, gamma: f64, config: &DdpgConfig) -> f64 {
        let n = batch.len() as f64;
        let state_width = batch.states.ncols();

        let next_actions = self.target_actor.predict(&batch.next_states).unwrap();
        let next_q = self
            .target_critic
            .predict(&concatenate![Axis(1), batch.next_states, next_actions])
            .unwrap();
        let y: Vec<f64> = (0..batch.len()).map(|i| batch.rewards[[i, 0]] + next_q[[i, 0]] * gamma).collect();

        let (q, cache) = self
            .critic
            .forward_train(&concatenate![Axis(1), batch.states, batch.actions])
            .unwrap();
        let mut loss = 0.0;
        let grad = Array2::from_shape_fn((batch.len(), 1), |(i, _)| (q[[i, 0]] - y[i]) * (2.0 / n));
        for i in 0..batch.len() {
            loss += (q[[i, 0]] - y[i]) * (q[[i, 0]] - y[i]);
        }
        self.critic.backward(&cache, &grad).unwrap();
        self.critic.clip_grad_norm(config.grad_clip);
        self.critic.sgd_step(config.critic_lr);

        let (actions, actor_cache) = self.actor.forward_train(&batch.states).unwrap();
        let (_, critic_cache) = self
            .critic
            .forward_train(&concatenate![Axis(1), batch.states, actions])
            .unwrap();
        let ascend = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let (input_grad, _) = self.critic.backward(&critic_cache, &ascend).unwrap();
        self.critic.zero_grad();
        let action_grad = input_grad.slice(s![.., state_width..]).to_owned();
        self.actor.backward(&actor_cache, &action_grad).unwrap();
        self.actor.clip_grad_norm(config.grad_clip);
        self.actor.sgd_step(config.actor_lr);

        self.target_critic.soft_update_from(&self.critic, config.tau).unwrap();
        self.target_actor.soft_update_from(&self.actor, config.tau).unwrap();
        loss / n
    }
}

#[test]
fn criterion_8_vector_reward_reduction() {
    let mut scenario = generate_network_a();
    scenario.detectors.truncate(1);
    scenario.validate().unwrap();
    let layout = PhaseLayout::from_scenario(&scenario);
    let config = DdpgConfig {
        actor_lr: 1e-2,
        critic_lr: 1e-2,
        tau: 0.05,
        batch_size: 16,
        ..DdpgConfig::default()
    };
    let mut agent = DdpgAgent::new(1, layout.clone(), config.clone(), 5).unwrap();
    let mut reference = ScalarDdpg {
        actor: agent.nets.actor.clone(),
        critic: agent.nets.critic.clone(),
        target_actor: agent.nets.target_actor.clone(),
        target_critic: agent.nets.target_critic.clone(),
    };

    // Transition stream from three noisy episodes on the toy scenario.
    let mut noise = OuNoise::new(layout.n_phases(), 0.15, 0.0, 0.5, 1.0, 8);
    let mut stream = Vec::new();
    for episode in 0..3u64 {
        let baseline = compute_baseline(&scenario, episode);
        let mut sim = SimState::new(&scenario, episode);
        let mut state = vec![1.0];
        for step in &baseline {
            let action = agent.select_action(&state, &noise.sample()).unwrap();
            sim.apply_phase_durations(&agent.durations(&action).unwrap()).unwrap();
            let obs = sim.run_episode_step();
            let next_state = obs.speed_scores();
            stream.push(Transition {
                state: std::mem::replace(&mut state, next_state.clone()),
                action,
                reward: reward(&obs, step).unwrap(),
                next_state,
            });
        }
    }
    let nonzero_rewards = stream.iter().filter(|t| t.reward[0] != 0.0).count();

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    let updates = 200;
    for u in 0..updates {
        let picks: Vec<&Transition> = (0..config.batch_size).map(|_| &stream[rng.random_range(0..stream.len())]).collect();
        let batch = Batch::from_transitions(picks);
        let gamma = GammaSchedule::default().gamma(u);
        let stats = agent.train_on_batch(&batch, gamma).unwrap();
        let loss = reference.update(&batch, gamma, &config);
        let same = (stats.critic_loss - loss).abs() <= 1e-12 * loss.abs()
            && agent.nets.actor.params_flat() == reference.actor.params_flat()
            && agent.nets.critic.params_flat() == reference.critic.params_flat()
            && agent.nets.target_actor == reference.target_actor
            && agent.nets.target_critic == reference.target_critic;
        mismatches += usize::from(!same);
    }
    let moved = agent.nets.actor.params_flat() != DdpgAgent::new(1, layout, config, 5).unwrap().nets.actor.params_flat();
    verdict(
        8,
        "vector-reward reduction",
        mismatches == 0 && moved && nonzero_rewards > 0,
        format!("{updates} updates on {} transitions ({nonzero_rewards} with nonzero reward), {mismatches} mismatching updates", stream.len()),
    );
}

#[test]
fn criterion_9_network_b_smoke() {
    let started = Instant::now();
    let scenario = generate_network_b();
    let dir = tempfile::tempdir().unwrap();
    let mut ddpg_config = preset(B_DDPG);
    ddpg_config.out_dir = Some(dir.path().join("ddpg"));
    let ddpg = run_experiment_on(&scenario, &ddpg_config).unwrap();
    let random = run_experiment_on(&scenario, &preset(B_RANDOM)).unwrap();

    let diverged = ddpg.trials.iter().filter(|t| t.status != TrialStatus::Completed).count();
    let mut populated = ddpg.trials.len() == 5;
    for t in &ddpg.trials {
        let log = harness::report::read_log(&trial_log_path(&dir.path().join("ddpg"), t.trial)).unwrap();
        populated &= log.len() == 50
            && log.iter().all(|e| e.mean_reward.is_finite() && e.gamma.is_some())
            // Updates start once the buffer holds a batch: 64 transitions at 30 per episode.
            && log.iter().skip(2).all(|e| e.actor_grad_norm.is_some() && e.critic_grad_norm.is_some());
    }
    let final10 = |rows: &[harness::AggregateRow]| rows[rows.len() - 10..].iter().map(|r| r.mean).sum::<f64>() / 10.0;
    let (d, r) = (final10(&ddpg.aggregate), final10(&random.aggregate));
    let secs = started.elapsed().as_secs_f64();
    verdict(
        9,
        "network B smoke experiment",
        diverged == 0 && populated && d >= r,
        format!("5x50 episodes, {diverged} aborted trials, logs populated = {populated}, final-10 mean ddpg {d:.5} vs random {r:.5}, {secs:.0}s"),
    );
}
