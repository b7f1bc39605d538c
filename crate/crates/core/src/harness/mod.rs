//! Experiment orchestration: seeds, trials, the random agent and artifacts.

pub mod baseline;
pub mod report;
pub mod reward;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{durations_from_multipliers, ControlError, PhaseLayout};
use crate::ddpg::{self, DdpgConfig};
use crate::microsim::{SimError, SimState};
use crate::netgraph::{resolve_scenario, Scenario, ScenarioError};
use crate::qlearn::{self, QLearnConfig};
use baseline::BaselineCache;
use reward::{mean, reward};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Stable 64-bit seed from a master seed, index path and purpose tag.
pub fn derive_seed(master: u64, parts: &[usize], tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((*p as u64).to_le_bytes());
    }
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Simulation seed for one episode of one trial.
pub fn episode_seed(master: u64, trial: usize, episode: usize) -> u64 {
    derive_seed(master, &[trial, episode], "episode")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Qlearn,
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Qlearn => "qlearn",
            Algorithm::Random => "random",
        }
    }
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Mean reward over episode steps and detectors.
    pub mean_reward: f64,
    pub actor_grad_norm: Option<f64>,
    pub critic_grad_norm: Option<f64>,
    pub gamma: Option<f64>,
    /// Seconds since the trial started, or 0 when wall time is not logged.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Completed,
    Diverged { episode: usize, reason: String },
    Failed { reason: String },
}

impl TrialStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Completed => "completed",
            TrialStatus::Diverged { .. } => "diverged",
            TrialStatus::Failed { .. } => "failed",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            TrialStatus::Completed => String::new(),
            TrialStatus::Diverged { episode, reason } => format!("episode {episode}: {reason}"),
            TrialStatus::Failed { reason } => reason.clone(),
        }
    }
}

/// What a training loop needs from the harness.
pub struct TrainContext<'a> {
    pub episodes: usize,
    pub master_seed: u64,
    pub trial: usize,
    pub baselines: &'a BaselineCache,
    pub log_wall_time: bool,
}

impl TrainContext<'_> {
    pub fn wall_time(&self, started: Instant) -> f64 {
        if self.log_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in name (`network-a`, `network-b`) or a scenario file path.
    pub scenario: String,
    pub algorithm: Algorithm,
    pub episodes: usize,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Record elapsed seconds in logs; off keeps logs byte-reproducible.
    #[serde(default)]
    pub log_wall_time: bool,
    #[serde(default)]
    pub baseline_cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub ddpg: DdpgConfig,
    #[serde(default)]
    pub qlearn: QLearnConfig,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(scenario: impl Into<String>, algorithm: Algorithm, episodes: usize) -> Self {
        ExperimentConfig {
            scenario: scenario.into(),
            algorithm,
            episodes,
            trials: 1,
            master_seed: 0,
            workers: 1,
            out_dir: None,
            log_wall_time: false,
            baseline_cache_dir: None,
            ddpg: DdpgConfig::default(),
            qlearn: QLearnConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        self.ddpg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.qlearn.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Uniform `[0, 1]` multipliers per phase through the shared adjustment.
pub fn random_agent_step<R: Rng + ?Sized>(layout: &PhaseLayout, rng: &mut R) -> Vec<f64> {
    let multipliers: Vec<f64> = (0..layout.n_phases()).map(|_| rng.random::<f64>()).collect();
    durations_from_multipliers(&multipliers, layout).expect("multipliers match the layout")
}

#[derive(Debug, thiserror::Error)]
pub enum RandomAgentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("{0}")]
    Reward(String),
}

pub fn train_random(scenario: &Scenario, ctx: &TrainContext<'_>) -> Result<Vec<EpisodeLog>, RandomAgentError> {
    let layout = PhaseLayout::from_scenario(scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.master_seed, &[ctx.trial], "random-agent"));
    let started = Instant::now();
    let mut log = Vec::with_capacity(ctx.episodes);
    for episode in 0..ctx.episodes {
        let seed = episode_seed(ctx.master_seed, ctx.trial, episode);
        let baseline = ctx.baselines.get(scenario, seed);
        let mut sim = SimState::new(scenario, seed);
        let mut rewards = Vec::new();
        for step in baseline.iter() {
            sim.apply_phase_durations(&random_agent_step(&layout, &mut rng))?;
            let obs = sim.run_episode_step();
            rewards.extend(reward(&obs, step).map_err(|e| RandomAgentError::Reward(e.to_string()))?);
        }
        log.push(EpisodeLog {
            episode,
            mean_reward: mean(&rewards),
            actor_grad_norm: None,
            critic_grad_norm: None,
            gamma: None,
            wall_time: ctx.wall_time(started),
        });
    }
    Ok(log)
}

/// Trained model in a text form, written next to the trial log.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Ddpg(String),
    Qlearn(String),
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub log: Vec<EpisodeLog>,
    pub status: TrialStatus,
    pub checkpoint: Option<Checkpoint>,
}

impl TrialResult {
    /// Highest per-episode mean reward and its episode.
    pub fn best_episode(&self) -> Option<(usize, f64)> {
        self.log
            .iter()
            .map(|e| (e.episode, e.mean_reward))
            .fold(None, |best, cur| match best {
                Some((_, b)) if b >= cur.1 => best,
                _ => Some(cur),
            })
    }
}

/// Cross-trial statistics for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub episode: usize,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub algorithm: Algorithm,
    pub trials: Vec<TrialResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl TrialSummary {
    pub fn from_trials(algorithm: Algorithm, trials: Vec<TrialResult>) -> Self {
        let aggregate = aggregate(&trials);
        TrialSummary {
            algorithm,
            trials,
            aggregate,
        }
    }

    /// Best episode of the best trial.
    pub fn best(&self) -> Option<(usize, usize, f64)> {
        self.trials
            .iter()
            .filter_map(|t| t.best_episode().map(|(e, r)| (t.trial, e, r)))
            .fold(None, |best, cur| match best {
                Some((_, _, b)) if b >= cur.2 => best,
                _ => Some(cur),
            })
    }
}

/// Per-episode mean, max and min over the trials that reached the episode.
pub fn aggregate(trials: &[TrialResult]) -> Vec<AggregateRow> {
    let episodes = trials.iter().map(|t| t.log.len()).max().unwrap_or(0);
    (0..episodes)
        .map(|e| {
            let values: Vec<f64> = trials.iter().filter_map(|t| t.log.get(e)).map(|l| l.mean_reward).collect();
            AggregateRow {
                episode: e,
                mean: mean(&values),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                trials: values.len(),
            }
        })
        .collect()
}

/// Runs a single trial; module errors become a failed status.
pub fn run_trial(scenario: &Scenario, config: &ExperimentConfig, trial: usize, baselines: &BaselineCache) -> TrialResult {
    let ctx = TrainContext {
        episodes: config.episodes,
        master_seed: config.master_seed,
        trial,
        baselines,
        log_wall_time: config.log_wall_time,
    };
    let failed = |reason: String| TrialResult {
        trial,
        log: Vec::new(),
        status: TrialStatus::Failed { reason },
        checkpoint: None,
    };
    match config.algorithm {
        Algorithm::Ddpg => match ddpg::train(scenario, &config.ddpg, &ctx) {
            Ok(out) => TrialResult {
                trial,
                log: out.log,
                status: out.status,
                checkpoint: Some(Checkpoint::Ddpg(out.nets.to_checkpoint())),
            },
            Err(e) => failed(e.to_string()),
        },
        Algorithm::Qlearn => match qlearn::train(scenario, &config.qlearn, &ctx) {
            Ok(out) => TrialResult {
                trial,
                log: out.log,
                status: out.status,
                checkpoint: Some(Checkpoint::Qlearn(report::qtables_text(&out.agents))),
            },
            Err(e) => failed(e.to_string()),
        },
        Algorithm::Random => match train_random(scenario, &ctx) {
            Ok(log) => TrialResult {
                trial,
                log,
                status: TrialStatus::Completed,
                checkpoint: None,
            },
            Err(e) => failed(e.to_string()),
        },
    }
}

/// Runs every trial (in parallel up to `workers`) and writes artifacts when
/// an output directory is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<TrialSummary, HarnessError> {
    config.validate()?;
    let scenario = resolve_scenario(&config.scenario)?;
    run_experiment_on(&scenario, config)
}

pub fn run_experiment_on(scenario: &Scenario, config: &ExperimentConfig) -> Result<TrialSummary, HarnessError> {
    config.validate()?;
    scenario.validate()?;
    let baselines = match &config.baseline_cache_dir {
        Some(dir) => BaselineCache::with_dir(dir).map_err(io_err(dir))?,
        None => BaselineCache::in_memory(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let trials: Vec<TrialResult> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(scenario, config, t, &baselines))
            .collect()
    });
    let summary = TrialSummary::from_trials(config.algorithm, trials);
    if let Some(dir) = &config.out_dir {
        report::write_run(dir, config, &summary)?;
    }
    Ok(summary)
}
