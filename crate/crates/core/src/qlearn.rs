//! Independent tabular Q-learning, one agent per signal phase.
//!
//! Each agent sees the speed-score change against baseline on its `k`
//! nearest detectors, binned into four tiles, and picks a timing multiplier
//! from a fixed set. The multipliers of all agents go through the same
//! cycle-preserving adjustment as the DDPG actions.

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{durations_from_multipliers, ControlError, PhaseLayout};
use crate::harness::reward::{mean, reward};
use crate::harness::{derive_seed, episode_seed, EpisodeLog, TrainContext, TrialStatus};
use crate::microsim::{EpisodeStepObservation, SimError, SimState};
use crate::netgraph::Scenario;

/// Timing multipliers an agent can choose from.
pub const RATIOS: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 3.5];
pub const N_BINS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum QLearnError {
    #[error("detector {detector} not present in an observation of {available}")]
    MissingDetector { detector: usize, available: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Reward(String),
}

/// Tile index of a speed-score change. Upper bounds are inclusive, and the
/// input is clamped to `[-1, 1]`.
pub fn tile(delta: f64) -> usize {
    let d = delta.clamp(-1.0, 1.0);
    if d <= -0.2 {
        0
    } else if d <= -0.001 {
        1
    } else if d <= 0.02 {
        2
    } else {
        3
    }
}

/// Base-4 positional code: the first detector is the least significant digit.
pub fn encode_bins(bins: &[usize]) -> usize {
    bins.iter().rev().fold(0, |code, &b| code * N_BINS + b)
}

pub fn decode_bins(mut code: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|_| {
            let b = code % N_BINS;
            code /= N_BINS;
            b
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearnConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Detectors per agent.
    pub detectors_per_agent: usize,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            detectors_per_agent: 2,
        }
    }
}

impl QLearnConfig {
    pub fn validate(&self) -> Result<(), QLearnError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(QLearnError::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(unit(self.gamma) && self.gamma < 1.0) {
            return Err(QLearnError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(unit(self.epsilon_start) && unit(self.epsilon_end)) {
            return Err(QLearnError::Config("epsilon values must lie in [0, 1]".into()));
        }
        if self.detectors_per_agent == 0 || self.detectors_per_agent > 8 {
            return Err(QLearnError::Config("detectors_per_agent must be in 1..=8".into()));
        }
        Ok(())
    }

    /// Linear decay from start to end across the run.
    pub fn epsilon(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.epsilon_start;
        }
        let t = episode.min(episodes - 1) as f64 / (episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// Dense table of `n_states × n_actions` estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    values: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, alpha: f64, gamma: f64) -> Self {
        QTable {
            n_actions,
            values: vec![0.0; n_states * n_actions],
            alpha,
            gamma,
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        let n = self.n_actions;
        &mut self.values[state * n..(state + 1) * n]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.row(state)[action]
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.row(state)[self.greedy(state)]
    }

    /// `Q(s,a) += α·(r + γ·max Q(s′,·) − Q(s,a))`.
    pub fn update(&mut self, state: usize, action: usize, reward: f64, next_state: usize) {
        let target = reward + self.gamma * self.max_value(next_state);
        let (alpha, n) = (self.alpha, self.n_actions);
        let q = &mut self.values[state * n + action];
        *q += alpha * (target - *q);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// ε-greedy choice over a table row.
pub fn epsilon_greedy<R: Rng + ?Sized>(table: &QTable, state: usize, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..table.n_actions())
    } else {
        table.greedy(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAgent {
    pub phase: usize,
    pub detectors: Vec<usize>,
    pub table: QTable,
    pub state: usize,
    pub last_action: Option<usize>,
}

impl PhaseAgent {
    pub fn new(phase: usize, detectors: Vec<usize>, config: &QLearnConfig) -> Self {
        let n_states = N_BINS.pow(detectors.len() as u32);
        let mut agent = PhaseAgent {
            phase,
            detectors,
            table: QTable::new(n_states, RATIOS.len(), config.alpha, config.gamma),
            state: 0,
            last_action: None,
        };
        agent.reset();
        agent
    }

    /// Start-of-episode state: no change against baseline.
    pub fn reset(&mut self) {
        self.state = encode_bins(&vec![tile(0.0); self.detectors.len()]);
        self.last_action = None;
    }

    pub fn encode_state(
        &self,
        observation: &EpisodeStepObservation,
        baseline: &EpisodeStepObservation,
    ) -> Result<usize, QLearnError> {
        let available = observation.detectors.len().min(baseline.detectors.len());
        let bins = self
            .detectors
            .iter()
            .map(|&d| {
                let (Some(o), Some(b)) = (observation.detectors.get(d), baseline.detectors.get(d)) else {
                    return Err(QLearnError::MissingDetector { detector: d, available });
                };
                Ok(tile(o.speed_score - b.speed_score))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(encode_bins(&bins))
    }

    pub fn choose_action<R: Rng + ?Sized>(&mut self, epsilon: f64, rng: &mut R) -> usize {
        let a = epsilon_greedy(&self.table, self.state, epsilon, rng);
        self.last_action = Some(a);
        a
    }

    /// Mean of the per-detector rewards over this agent's detectors.
    pub fn scalar_reward(&self, rewards: &[f64]) -> f64 {
        mean(&self.detectors.iter().map(|&d| rewards[d]).collect::<Vec<_>>())
    }

    /// Learns from the last action and moves to `next_state`.
    pub fn learn(&mut self, reward: f64, next_state: usize) {
        if let Some(a) = self.last_action {
            self.table.update(self.state, a, reward, next_state);
        }
        self.state = next_state;
    }
}

/// The `k` detectors closest to each phase, in priority order: detectors on
/// the phase's approach sections, then on its exit sections, then by hop
/// distance from the intersection node, ties broken by index.
pub fn assign_detectors(scenario: &Scenario, k: usize) -> Vec<Vec<usize>> {
    let node_ids: HashMap<&str, usize> = scenario
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut adjacent = vec![Vec::new(); scenario.nodes.len()];
    for s in &scenario.sections {
        if let (Some(&a), Some(&b)) = (node_ids.get(s.from.as_str()), node_ids.get(s.to.as_str())) {
            adjacent[a].push(b);
            adjacent[b].push(a);
        }
    }
    let hops_from = |start: usize| {
        let mut dist = vec![usize::MAX; adjacent.len()];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        while let Some(n) = queue.pop_front() {
            for &m in &adjacent[n] {
                if dist[m] == usize::MAX {
                    dist[m] = dist[n] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    };

    let mut out = Vec::new();
    for ix in &scenario.intersections {
        let dist = node_ids.get(ix.node.as_str()).map(|&n| hops_from(n));
        for phase in &ix.phases {
            let mut ranked: Vec<(u8, usize, usize)> = scenario
                .detectors
                .iter()
                .enumerate()
                .map(|(d, det)| {
                    let class = if phase.movements.iter().any(|m| m.0 == det.section) {
                        0
                    } else if phase.movements.iter().any(|m| m.1 == det.section) {
                        1
                    } else {
                        2
                    };
                    let hops = scenario
                        .section_index(&det.section)
                        .and_then(|s| {
                            let sec = &scenario.sections[s];
                            let dist = dist.as_ref()?;
                            let ends = [node_ids.get(sec.from.as_str()), node_ids.get(sec.to.as_str())];
                            ends.into_iter().flatten().map(|&n| dist[n]).min()
                        })
                        .unwrap_or(usize::MAX);
                    (class, hops, d)
                })
                .collect();
            ranked.sort_unstable();
            out.push(ranked.into_iter().take(k).map(|r| r.2).collect());
        }
    }
    out
}

/// One agent per phase of the scenario, in layout order.
pub fn build_agents(scenario: &Scenario, config: &QLearnConfig) -> Vec<PhaseAgent> {
    assign_detectors(scenario, config.detectors_per_agent)
        .into_iter()
        .enumerate()
        .map(|(phase, detectors)| PhaseAgent::new(phase, detectors, config))
        .collect()
}

/// Runs one episode with learning enabled and returns the mean reward over
/// steps and detectors.
pub fn run_multiagent_episode<R: Rng + ?Sized>(
    scenario: &Scenario,
    layout: &PhaseLayout,
    agents: &mut [PhaseAgent],
    baseline: &[EpisodeStepObservation],
    seed: u64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64, QLearnError> {
    let mut sim = SimState::new(scenario, seed);
    agents.iter_mut().for_each(PhaseAgent::reset);
    let mut rewards = Vec::new();
    for step in baseline.iter().take(scenario.timing.episode_steps()) {
        let multipliers: Vec<f64> = agents
            .iter_mut()
            .map(|a| RATIOS[a.choose_action(epsilon, rng)])
            .collect();
        sim.apply_phase_durations(&durations_from_multipliers(&multipliers, layout)?)?;
        let obs = sim.run_episode_step();
        let r = reward(&obs, step).map_err(|e| QLearnError::Reward(e.to_string()))?;
        for agent in agents.iter_mut() {
            let next = agent.encode_state(&obs, step)?;
            let scalar = agent.scalar_reward(&r);
            agent.learn(scalar, next);
        }
        rewards.extend_from_slice(&r);
    }
    Ok(mean(&rewards))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpisodeLog>,
    pub agents: Vec<PhaseAgent>,
    pub status: TrialStatus,
}

pub fn train(scenario: &Scenario, config: &QLearnConfig, ctx: &TrainContext<'_>) -> Result<TrainOutcome, QLearnError> {
    config.validate()?;
    let layout = PhaseLayout::from_scenario(scenario);
    let mut agents = build_agents(scenario, config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.master_seed, &[ctx.trial], "qlearn-explore"));
    let started = Instant::now();
    let mut log = Vec::with_capacity(ctx.episodes);
    for episode in 0..ctx.episodes {
        let seed = episode_seed(ctx.master_seed, ctx.trial, episode);
        let baseline = ctx.baselines.get(scenario, seed);
        let epsilon = config.epsilon(episode, ctx.episodes);
        let mean_reward = run_multiagent_episode(scenario, &layout, &mut agents, &baseline, seed, epsilon, &mut rng)?;
        log.push(EpisodeLog {
            episode,
            mean_reward,
            actor_grad_norm: None,
            critic_grad_norm: None,
            gamma: None,
            wall_time: ctx.wall_time(started),
        });
        if !agents.iter().all(|a| a.table.all_finite()) {
            return Ok(TrainOutcome {
                log,
                agents,
                status: TrialStatus::Diverged {
                    episode,
                    reason: "non-finite Q-value".into(),
                },
            });
        }
    }
    Ok(TrainOutcome {
        log,
        agents,
        status: TrialStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::DetectorObservation;
    use crate::netgraph::{generate_network_a, generate_network_b};

    fn obs(scores: &[f64]) -> EpisodeStepObservation {
        EpisodeStepObservation {
            clock: 0.0,
            detectors: scores
                .iter()
                .map(|&s| DetectorObservation {
                    count: 1,
                    speed_score: s,
                    occupancy: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn tile_boundaries() {
        assert_eq!(tile(-1.0), 0);
        assert_eq!(tile(-0.2), 0);
        assert_eq!(tile(-0.1999), 1);
        assert_eq!(tile(-0.001), 1);
        assert_eq!(tile(0.0), 2);
        assert_eq!(tile(0.02), 2);
        assert_eq!(tile(0.0201), 3);
        assert_eq!(tile(1.0), 3);
        assert_eq!(tile(-7.0), 0);
    }

    #[test]
    fn encoding_examples() {
        let agent = PhaseAgent::new(0, vec![0, 1], &QLearnConfig::default());
        let zero = agent.encode_state(&obs(&[0.5, 0.5]), &obs(&[0.5, 0.5])).unwrap();
        assert_eq!(zero, 2 + 2 * 4);
        assert_eq!(agent.encode_state(&obs(&[0.0, 1.0]), &obs(&[0.5, 0.5])).unwrap(), 12);
        assert!(matches!(
            agent.encode_state(&obs(&[0.5]), &obs(&[0.5])),
            Err(QLearnError::MissingDetector { detector: 1, .. })
        ));
    }

    #[test]
    fn encoding_is_a_bijection() {
        for k in 1..=3 {
            let n = N_BINS.pow(k as u32);
            let mut seen = vec![false; n];
            for code in 0..n {
                let bins = decode_bins(code, k);
                assert_eq!(encode_bins(&bins), code);
                seen[code] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = PhaseAgent::new(0, vec![0], &QLearnConfig::default());
        assert_eq!(agent.choose_action(0.0, &mut rng), 0);
        let s = agent.state;
        agent.table.row_mut(s).copy_from_slice(&[0.0, 0.0, 5.0, 0.0, 0.0]);
        let a = agent.choose_action(0.0, &mut rng);
        assert_eq!(RATIOS[a], 1.0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = QTable::new(1, 5, 0.1, 0.9);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[epsilon_greedy(&table, 0, 1.0, &mut rng)] += 1;
        }
        let p = 0.2;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn update_examples() {
        let mut t = QTable::new(2, 2, 1.0, 0.0);
        t.update(0, 1, 0.3, 1);
        assert_eq!(t.get(0, 1), 0.3);
        let mut z = QTable::new(2, 2, 0.1, 0.9);
        z.update(0, 0, 0.0, 1);
        assert_eq!(z, QTable::new(2, 2, 0.1, 0.9));
    }

    #[test]
    fn epsilon_decays_linearly() {
        let c = QLearnConfig::default();
        assert_eq!(c.epsilon(0, 11), 0.3);
        assert!((c.epsilon(10, 11) - 0.05).abs() < 1e-15);
        assert!((c.epsilon(5, 11) - 0.175).abs() < 1e-15);
        assert_eq!(c.epsilon(0, 1), 0.3);
    }

    #[test]
    fn network_a_agents_watch_their_approaches() {
        let a = generate_network_a();
        let assigned = assign_detectors(&a, 2);
        assert_eq!(assigned.len(), 2);
        for (phase, dets) in a.intersections[0].phases.iter().zip(&assigned) {
            assert_eq!(dets.len(), 2);
            for &d in dets {
                let section = &a.detectors[d].section;
                assert!(phase.movements.iter().any(|m| &m.0 == section), "{section}");
            }
        }
    }

    #[test]
    fn every_phase_gets_distinct_detectors() {
        let b = generate_network_b();
        let agents = build_agents(&b, &QLearnConfig::default());
        assert_eq!(agents.len(), b.n_phases());
        for agent in &agents {
            assert_eq!(agent.detectors.len(), 2);
            assert_ne!(agent.detectors[0], agent.detectors[1]);
            assert_eq!(agent.table.n_states(), 16);
        }
    }

    #[test]
    fn greedy_zero_tables_reproduce_base_plan() {
        let a = generate_network_a();
        let layout = PhaseLayout::from_scenario(&a);
        let mut agents = build_agents(&a, &QLearnConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Vec<f64> = agents.iter_mut().map(|g| RATIOS[g.choose_action(0.0, &mut rng)]).collect();
        assert_eq!(m, vec![0.2, 0.2]);
        assert_eq!(durations_from_multipliers(&m, &layout).unwrap(), layout.base_durations());
    }
}
