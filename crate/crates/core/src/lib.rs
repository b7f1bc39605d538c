//! Traffic-signal timing control with deep deterministic policy gradients.
//!
//! The crate bundles a deterministic microscopic traffic simulator
//! ([`microsim`]) driven by scenarios from [`netgraph`], the cycle-preserving
//! action transform ([`control`]), a small neural-network kernel ([`nn`]),
//! the DDPG trainer with per-detector rewards ([`ddpg`]), a multi-agent
//! tabular Q-learning baseline ([`qlearn`]) and experiment orchestration
//! ([`harness`]).

pub mod control;
pub mod ddpg;
pub mod harness;
pub mod microsim;
pub mod netgraph;
pub mod nn;
pub mod qlearn;

pub use control::{adjust_durations, durations_from_multipliers, durations_from_raw, softmax_by_group, PhaseLayout};
pub use ddpg::{DdpgAgent, DdpgConfig, GammaSchedule, Transition};
pub use harness::{
    baseline::{compute_baseline, BaselineCache, BaselineTrace},
    reward::{reward, REWARD_ALPHA},
    Algorithm, EpisodeLog, ExperimentConfig, TrialSummary,
};
pub use microsim::{DetectorObservation, EpisodeStepObservation, SimState};
pub use netgraph::{generate_network_a, generate_network_b, load_scenario, save_scenario, Scenario};
pub use nn::{Activation, LayerSpec, Mlp, Mode};
pub use qlearn::{PhaseAgent, QLearnConfig};
