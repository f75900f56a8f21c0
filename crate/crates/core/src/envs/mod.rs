//! Benchmark environments behind one interface.
//!
//! All three environments are deterministic given a reset seed and an action
//! sequence: the same inputs reproduce trajectories byte for byte. Instances
//! are plain values; cloning one snapshots the full world state, which the
//! influence oracle uses to branch counterfactual rollouts mid-episode.

mod particle;
mod push_box;
mod secret_room;

pub use particle::ParticleWorld;
pub use push_box::PushBox;
pub use secret_room::SecretRoom;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Discrete gridworld move set shared by Push-Box and Secret Room.
pub const GRID_ACTIONS: usize = 5;

/// Direction deltas indexed by discrete action: up, down, left, right, stay.
pub const DIRECTIONS: [(i64, i64); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    PushBox,
    SecretRoom,
    CoopNav,
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EnvName::PushBox => "push_box",
            EnvName::SecretRoom => "secret_room",
            EnvName::CoopNav => "coop_nav",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EnvName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push_box" => Ok(EnvName::PushBox),
            "secret_room" => Ok(EnvName::SecretRoom),
            "coop_nav" => Ok(EnvName::CoopNav),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected push_box, secret_room, or coop_nav"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the action vector fed to critics (one-hot width for discrete).
    pub fn vector_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(k) => *k,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Team,
    PerAgent,
}

/// Fixed description of an environment's interface for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvName,
    pub n_agents: usize,
    pub obs_dims: Vec<usize>,
    pub action_space: ActionSpace,
    pub max_steps: usize,
    pub reward_mode: RewardMode,
}

/// An executed joint action, one entry per agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Reinitializes the world from the seed and returns the joint observation.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[Action]) -> Result<StepResult>;

    fn observe(&self, agent: usize) -> Vec<f64>;

    /// Snapshot of the full world state for counterfactual branching.
    fn clone_boxed(&self) -> Box<dyn Environment>;

    fn joint_obs(&self) -> Vec<Vec<f64>> {
        (0..self.spec().n_agents).map(|i| self.observe(i)).collect()
    }

    /// Current (mean closest-agent landmark distance, colliding pairs) for
    /// environments that track them.
    fn landmark_diagnostics(&self) -> Option<(f64, usize)> {
        None
    }
}

pub fn make_env(name: EnvName) -> Box<dyn Environment> {
    match name {
        EnvName::PushBox => Box::new(PushBox::new()),
        EnvName::SecretRoom => Box::new(SecretRoom::new()),
        EnvName::CoopNav => Box::new(ParticleWorld::new()),
    }
}

pub(crate) fn check_discrete_actions(actions: &[Action], n: usize, k: usize) -> Result<Vec<usize>> {
    if actions.len() != n {
        return Err(Error::Contract(format!(
            "expected {n} actions, got {}",
            actions.len()
        )));
    }
    actions
        .iter()
        .map(|a| match a {
            Action::Discrete(idx) if *idx < k => Ok(*idx),
            Action::Discrete(idx) => Err(Error::Contract(format!(
                "discrete action {idx} out of range 0..{k}"
            ))),
            Action::Continuous(_) => Err(Error::Contract(
                "continuous action passed to a discrete environment".into(),
            )),
        })
        .collect()
}
