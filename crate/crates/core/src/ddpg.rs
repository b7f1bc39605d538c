//! DDPG with disaggregated (per-detector) rewards.
//!
//! The critic regresses one Q-value per detector against the vector target
//! `y = r + γ·Q′(s′, π′(s′))`; the actor ascends the mean of those Q-values.
//! Exploration noise is added to the actor's raw outputs before the phase
//! adjustment, so noisy actions still keep every cycle length.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{durations_from_raw, ControlError, PhaseLayout};
use crate::harness::reward::{mean, reward};
use crate::harness::{derive_seed, episode_seed, EpisodeLog, TrainContext, TrialStatus};
use crate::microsim::{SimError, SimState};
use crate::netgraph::Scenario;
use crate::nn::{Activation, Layer, LayerSpec, Mlp, NnError};

#[derive(Debug, thiserror::Error)]
pub enum DdpgError {
    #[error("actor produced non-finite output {output:?} for state {state:?}")]
    NonFiniteAction { state: Vec<f64>, output: Vec<f64> },
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughSamples { have: usize, need: usize },
    #[error("transition widths do not match the agent ({0})")]
    BadTransition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: Vec<f64>,
    pub next_state: Vec<f64>,
}

/// Bounded FIFO of transitions with a uniform sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices, drawn with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.items.len();
        assert!(len > 0, "sampling from an empty replay buffer");
        (0..n).map(|_| self.rng.random_range(0..len)).collect()
    }

    /// A minibatch of `n` transitions; the buffer must hold at least `n`.
    pub fn sample(&mut self, n: usize) -> Result<Batch, DdpgError> {
        if self.items.len() < n {
            return Err(DdpgError::NotEnoughSamples {
                have: self.items.len(),
                need: n,
            });
        }
        let idx = self.sample_indices(n);
        Ok(Batch::from_transitions(idx.iter().map(|&i| &self.items[i])))
    }
}

/// Minibatch as row-per-transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Batch {
        let items: Vec<&Transition> = items.into_iter().collect();
        let rows = |f: &dyn Fn(&Transition) -> &Vec<f64>| {
            let width = items.first().map_or(0, |t| f(t).len());
            Array2::from_shape_fn((items.len(), width), |(i, j)| f(items[i])[j])
        };
        Batch {
            states: rows(&|t| &t.state),
            actions: rows(&|t| &t.action),
            rewards: rows(&|t| &t.reward),
            next_states: rows(&|t| &t.next_state),
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ornstein-Uhlenbeck process, one coordinate per action dimension.
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub dt: f64,
    state: Vec<f64>,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, mu: f64, sigma: f64, dt: f64, seed: u64) -> Self {
        OuNoise {
            theta,
            mu,
            sigma,
            dt,
            state: vec![mu; dim],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn reset(&mut self) {
        self.state.fill(self.mu);
    }

    pub fn sample(&mut self) -> Vec<f64> {
        let (theta, mu, sigma, dt) = (self.theta, self.mu, self.sigma, self.dt);
        for x in &mut self.state {
            let n: f64 = self.rng.sample(StandardNormal);
            *x += theta * (mu - *x) * dt + sigma * dt.sqrt() * n;
        }
        self.state.clone()
    }
}

/// Discount factor as a function of the episode index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    Constant { value: f64 },
    /// Starts at `min`, peaks at `max` half way through each period.
    Triangle { min: f64, max: f64, period: usize },
    /// Linear interpolation between `(episode, gamma)` points, held flat
    /// outside them.
    Piecewise { points: Vec<(usize, f64)> },
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Triangle {
            min: 0.0,
            max: 0.9,
            period: 50,
        }
    }
}

impl GammaSchedule {
    pub fn gamma(&self, episode: usize) -> f64 {
        match self {
            GammaSchedule::Constant { value } => *value,
            GammaSchedule::Triangle { min, max, period } => {
                let phase = (episode % period) as f64 / *period as f64;
                min + (max - min) * (1.0 - (2.0 * phase - 1.0).abs())
            }
            GammaSchedule::Piecewise { points } => {
                let Some(first) = points.first() else { return 0.0 };
                if episode <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((e0, g0), (e1, g1)) = (w[0], w[1]);
                    if episode <= e1 {
                        let t = (episode - e0) as f64 / (e1 - e0).max(1) as f64;
                        return g0 + (g1 - g0) * t;
                    }
                }
                points.last().expect("non-empty").1
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |g: f64| (0.0..1.0).contains(&g);
        match self {
            GammaSchedule::Constant { value } if !ok(*value) => Err(format!("gamma {value} outside [0, 1)")),
            GammaSchedule::Triangle { min, max, period } => {
                if !(ok(*min) && ok(*max) && min <= max) {
                    Err(format!("triangle bounds [{min}, {max}] must satisfy 0 <= min <= max < 1"))
                } else if *period == 0 {
                    Err("triangle period must be positive".into())
                } else {
                    Ok(())
                }
            }
            GammaSchedule::Piecewise { points } => {
                if points.is_empty() {
                    Err("piecewise schedule needs at least one point".into())
                } else if points.iter().any(|p| !ok(p.1)) {
                    Err("piecewise gamma values must lie in [0, 1)".into())
                } else if points.windows(2).any(|w| w[0].0 >= w[1].0) {
                    Err("piecewise episodes must increase".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    /// Actor hidden widths before the per-phase layer; default `[4·nd, 2·nd]`.
    pub actor_hidden: Option<Vec<usize>>,
    /// Critic hidden widths; default `[4·(nd+np), 2·(nd+np)]`.
    pub critic_hidden: Option<Vec<usize>>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_mu: f64,
    pub ou_dt: f64,
    pub gamma: GammaSchedule,
    /// Gradient updates after each episode step once the buffer holds a batch.
    pub updates_per_step: usize,
    /// Per-detector weights for the actor objective; unweighted mean when unset.
    pub detector_weights: Option<Vec<f64>>,
    /// Factor applied to the He-initialized output layer of the actor. Small
    /// values start training close to the base plan.
    pub actor_output_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_hidden: None,
            critic_hidden: None,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.001,
            replay_capacity: 100_000,
            batch_size: 64,
            grad_clip: 0.5,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            ou_mu: 0.0,
            ou_dt: 1.0,
            gamma: GammaSchedule::default(),
            updates_per_step: 1,
            detector_weights: None,
            actor_output_scale: 1.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let fail = |m: String| Err(DdpgError::Config(m));
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return fail("need 0 < batch_size <= replay_capacity".into());
        }
        if !(self.actor_output_scale >= 0.0 && self.actor_output_scale.is_finite()) {
            return fail("actor_output_scale must be finite and non-negative".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive".into());
        }
        if let Some(w) = &self.detector_weights {
            if w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return fail("detector weights must be non-negative with positive sum".into());
            }
        }
        self.gamma.validate().or_else(fail)
    }
}

/// Online and target networks.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub tau: f64,
}

impl AgentNets {
    pub fn all_finite(&self) -> bool {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
            .iter()
            .all(|n| n.all_finite())
    }

    /// Checkpoint of all four networks in one text document.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("trafficgrad-ddpg 1\n");
        for (name, net) in self.named() {
            out.push_str(&format!("[{name}]\n"));
            out.push_str(&net.to_checkpoint());
        }
        out
    }

    pub fn from_checkpoint(text: &str, tau: f64) -> Result<AgentNets, NnError> {
        let mut lines = text.lines();
        if lines.next() != Some("trafficgrad-ddpg 1") {
            return Err(NnError::Checkpoint("unsupported agent header".into()));
        }
        let mut parts: Vec<(String, String)> = Vec::new();
        for line in lines {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                parts.push((name.to_string(), String::new()));
            } else if let Some((_, body)) = parts.last_mut() {
                body.push_str(line);
                body.push('\n');
            }
        }
        let take = |name: &str| -> Result<Mlp, NnError> {
            let body = parts
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing [{name}]")))?;
            Mlp::from_checkpoint(&body.1)
        };
        Ok(AgentNets {
            actor: take("actor")?,
            critic: take("critic")?,
            target_actor: take("target_actor")?,
            target_critic: take("target_critic")?,
            tau,
        })
    }

    fn named(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("target_actor", &self.target_actor),
            ("target_critic", &self.target_critic),
        ]
    }
}

/// θ′ ← τθ + (1 − τ)θ′.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    target.soft_update_from(online, tau)
}

pub fn actor_layers(nd: usize, np: usize, hidden: Option<&[usize]>) -> Vec<LayerSpec> {
    let default = [4 * nd, 2 * nd];
    let mut specs: Vec<LayerSpec> = hidden
        .unwrap_or(&default)
        .iter()
        .map(|&units| LayerSpec::Dense {
            units,
            activation: Activation::LeakyRelu,
        })
        .collect();
    specs.push(LayerSpec::Dense {
        units: np,
        activation: Activation::LeakyRelu,
    });
    specs.push(LayerSpec::BatchNorm);
    specs.push(LayerSpec::Dense {
        units: np,
        activation: Activation::Relu,
    });
    specs
}

pub fn critic_layers(nd: usize, np: usize, hidden: Option<&[usize]>) -> Vec<LayerSpec> {
    let default = [4 * (nd + np), 2 * (nd + np)];
    let mut specs: Vec<LayerSpec> = hidden
        .unwrap_or(&default)
        .iter()
        .map(|&units| LayerSpec::Dense {
            units,
            activation: Activation::LeakyRelu,
        })
        .collect();
    specs.push(LayerSpec::Dense {
        units: nd,
        activation: Activation::Linear,
    });
    specs
}

/// Norms recorded by one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Global gradient norms after clipping.
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub nets: AgentNets,
    pub config: DdpgConfig,
    pub layout: PhaseLayout,
    nd: usize,
    np: usize,
    /// Normalized actor-objective weights over detectors.
    weights: Vec<f64>,
}

impl DdpgAgent {
    pub fn new(nd: usize, layout: PhaseLayout, config: DdpgConfig, seed: u64) -> Result<Self, DdpgError> {
        config.validate()?;
        let np = layout.n_phases();
        let weights = match &config.detector_weights {
            None => vec![1.0 / nd as f64; nd],
            Some(w) if w.len() == nd => {
                let total: f64 = w.iter().sum();
                w.iter().map(|v| v / total).collect()
            }
            Some(w) => {
                return Err(DdpgError::Config(format!(
                    "{} detector weights for {nd} detectors",
                    w.len()
                )))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = Mlp::new(nd, &actor_layers(nd, np, config.actor_hidden.as_deref()), &mut rng);
        if config.actor_output_scale != 1.0 {
            if let Some(Layer::Dense(d)) = actor.layers_mut().last_mut() {
                d.weight *= config.actor_output_scale;
                d.bias *= config.actor_output_scale;
            }
        }
        let critic = Mlp::new(nd + np, &critic_layers(nd, np, config.critic_hidden.as_deref()), &mut rng);
        Ok(DdpgAgent {
            nets: AgentNets {
                target_actor: actor.clone(),
                target_critic: critic.clone(),
                actor,
                critic,
                tau: config.tau,
            },
            config,
            layout,
            nd,
            np,
            weights,
        })
    }

    pub fn n_detectors(&self) -> usize {
        self.nd
    }

    pub fn n_phases(&self) -> usize {
        self.np
    }

    /// Actor output (eval mode) plus exploration noise, before the phase adjustment.
    pub fn select_action(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>, DdpgError> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| DdpgError::BadTransition(e.to_string()))?;
        let out = self.nets.actor.predict(&x)?;
        let mut action: Vec<f64> = out.row(0).to_vec();
        if action.iter().any(|v| !v.is_finite()) {
            return Err(DdpgError::NonFiniteAction {
                state: state.to_vec(),
                output: action,
            });
        }
        for (a, n) in action.iter_mut().zip(noise) {
            *a += n;
        }
        Ok(action)
    }

    /// Phase durations for a raw action.
    pub fn durations(&self, action: &[f64]) -> Result<Vec<f64>, DdpgError> {
        Ok(durations_from_raw(action, &self.layout)?)
    }

    /// `y = r + γ·Q′(s′, π′(s′))`, one column per detector.
    pub fn critic_targets(&self, batch: &Batch, gamma: f64) -> Result<Array2<f64>, DdpgError> {
        let next_actions = self.nets.target_actor.predict(&batch.next_states)?;
        let q_in = concatenate![Axis(1), batch.next_states, next_actions];
        let q_next = self.nets.target_critic.predict(&q_in)?;
        Ok(&batch.rewards + &(q_next * gamma))
    }

    /// One clipped SGD step on `(1/N)·Σ_i Σ_d (y − Q(s, a))²`.
    pub fn update_critic(&mut self, batch: &Batch, gamma: f64) -> Result<(f64, f64), DdpgError> {
        let y = self.critic_targets(batch, gamma)?;
        let q_in = concatenate![Axis(1), batch.states, batch.actions];
        let critic = &mut self.nets.critic;
        let (q, cache) = critic.forward_train(&q_in)?;
        let n = batch.len() as f64;
        let diff = q - &y;
        let loss = diff.mapv(|v| v * v).sum() / n;
        let grad = diff * (2.0 / n);
        critic.backward(&cache, &grad)?;
        critic.clip_grad_norm(self.config.grad_clip);
        let norm = critic.grad_report().global_norm;
        critic.sgd_step(self.config.critic_lr);
        Ok((loss, norm))
    }

    /// Gradient of the actor objective `(1/N)·Σ_i Σ_d w_d·Q(s_i, π(s_i))_d`,
    /// applied as descent on its negative. Returns the clipped norm.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<f64, DdpgError> {
        let n = batch.len() as f64;
        let nets = &mut self.nets;
        let (actions, actor_cache) = nets.actor.forward_train(&batch.states)?;
        let q_in = concatenate![Axis(1), batch.states, actions];
        let (_, critic_cache) = nets.critic.forward_train(&q_in)?;
        let scale = -1.0 / n;
        let w = Array1::from(self.weights.iter().map(|w| scale * w).collect::<Vec<_>>());
        let grad_q = Array2::from_shape_fn((batch.len(), self.nd), |(_, d)| w[d]);
        let (grad_in, _) = nets.critic.backward(&critic_cache, &grad_q)?;
        nets.critic.zero_grad();
        let grad_actions = grad_in.slice(s![.., self.nd..]).to_owned();
        nets.actor.backward(&actor_cache, &grad_actions)?;
        nets.actor.clip_grad_norm(self.config.grad_clip);
        let norm = nets.actor.grad_report().global_norm;
        nets.actor.sgd_step(self.config.actor_lr);
        Ok(norm)
    }

    pub fn soft_update_targets(&mut self) -> Result<(), DdpgError> {
        let nets = &mut self.nets;
        soft_update(&mut nets.target_critic, &nets.critic, nets.tau)?;
        soft_update(&mut nets.target_actor, &nets.actor, nets.tau)?;
        Ok(())
    }

    /// Critic step, actor step, then target blending.
    pub fn train_on_batch(&mut self, batch: &Batch, gamma: f64) -> Result<UpdateStats, DdpgError> {
        if batch.states.ncols() != self.nd || batch.actions.ncols() != self.np || batch.rewards.ncols() != self.nd {
            return Err(DdpgError::BadTransition(format!(
                "batch widths {}/{}/{} for nd={} np={}",
                batch.states.ncols(),
                batch.actions.ncols(),
                batch.rewards.ncols(),
                self.nd,
                self.np
            )));
        }
        let (critic_loss, critic_grad_norm) = self.update_critic(batch, gamma)?;
        let actor_grad_norm = self.update_actor(batch)?;
        self.soft_update_targets()?;
        Ok(UpdateStats {
            critic_loss,
            critic_grad_norm,
            actor_grad_norm,
        })
    }
}

/// Result of a training run: the per-episode log, final networks and status.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpisodeLog>,
    pub nets: AgentNets,
    pub status: TrialStatus,
}

/// Full DDPG training loop over `ctx.episodes` episodes.
pub fn train(scenario: &Scenario, config: &DdpgConfig, ctx: &TrainContext<'_>) -> Result<TrainOutcome, DdpgError> {
    let nd = scenario.n_detectors();
    let layout = PhaseLayout::from_scenario(scenario);
    let np = layout.n_phases();
    let mut agent = DdpgAgent::new(nd, layout, config.clone(), derive_seed(ctx.master_seed, &[ctx.trial], "ddpg-init"))?;
    let mut replay = ReplayBuffer::new(config.replay_capacity, derive_seed(ctx.master_seed, &[ctx.trial], "ddpg-replay"));
    let mut noise = OuNoise::new(
        np,
        config.ou_theta,
        config.ou_mu,
        config.ou_sigma,
        config.ou_dt,
        derive_seed(ctx.master_seed, &[ctx.trial], "ddpg-noise"),
    );
    let steps = scenario.timing.episode_steps();
    let mut log = Vec::with_capacity(ctx.episodes);
    let started = Instant::now();

    for episode in 0..ctx.episodes {
        let seed = episode_seed(ctx.master_seed, ctx.trial, episode);
        let baseline = ctx.baselines.get(scenario, seed);
        let gamma = config.gamma.gamma(episode);
        let mut sim = SimState::new(scenario, seed);
        noise.reset();

        let mut state = vec![1.0; nd];
        let mut rewards = Vec::with_capacity(steps * nd);
        let (mut actor_norms, mut critic_norms) = (Vec::new(), Vec::new());
        for t in 0..steps {
            let action = match agent.select_action(&state, &noise.sample()) {
                Ok(a) => a,
                Err(e @ DdpgError::NonFiniteAction { .. }) => {
                    return Ok(TrainOutcome {
                        log,
                        nets: agent.nets,
                        status: TrialStatus::Diverged {
                            episode,
                            reason: e.to_string(),
                        },
                    })
                }
                Err(e) => return Err(e),
            };
            sim.apply_phase_durations(&agent.durations(&action)?)?;
            let obs = sim.run_episode_step();
            let r = reward(&obs, &baseline[t]).map_err(|e| DdpgError::BadTransition(e.to_string()))?;
            let next_state = obs.speed_scores();
            rewards.extend_from_slice(&r);
            replay.push(Transition {
                state: std::mem::replace(&mut state, next_state.clone()),
                action,
                reward: r,
                next_state,
            });
            if replay.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    let batch = replay.sample(config.batch_size)?;
                    let stats = agent.train_on_batch(&batch, gamma)?;
                    actor_norms.push(stats.actor_grad_norm);
                    critic_norms.push(stats.critic_grad_norm);
                }
                if !agent.nets.all_finite() {
                    log.push(EpisodeLog {
                        episode,
                        mean_reward: mean(&rewards),
                        actor_grad_norm: Some(mean(&actor_norms)),
                        critic_grad_norm: Some(mean(&critic_norms)),
                        gamma: Some(gamma),
                        wall_time: ctx.wall_time(started),
                    });
                    return Ok(TrainOutcome {
                        log,
                        nets: agent.nets,
                        status: TrialStatus::Diverged {
                            episode,
                            reason: format!("non-finite parameters after step {t}"),
                        },
                    });
                }
            }
        }
        log.push(EpisodeLog {
            episode,
            mean_reward: mean(&rewards),
            actor_grad_norm: (!actor_norms.is_empty()).then(|| mean(&actor_norms)),
            critic_grad_norm: (!critic_norms.is_empty()).then(|| mean(&critic_norms)),
            gamma: Some(gamma),
            wall_time: ctx.wall_time(started),
        });
    }
    Ok(TrainOutcome {
        log,
        nets: agent.nets,
        status: TrialStatus::Completed,
    })
}
