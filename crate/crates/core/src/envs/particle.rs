//! Cooperative Navigation: three agents spread to cover three landmarks in a
//! continuous 2-D world with double-integrator physics.
//!
//! Per step, each agent's acceleration is its action clipped to the unit
//! box; velocities are damped, speed-capped, and integrated. The team reward
//! is the negative sum over landmarks of the closest agent's distance, minus
//! one per colliding agent pair.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Action, ActionSpace, EnvName, EnvSpec, Environment, RewardMode, StepResult,
};
use crate::{Error, Result};

pub const N_AGENTS: usize = 3;
pub const N_LANDMARKS: usize = 3;
pub const MAX_STEPS: usize = 100;
pub const AGENT_RADIUS: f64 = 0.15;
pub const DAMPING: f64 = 0.25;
pub const DT: f64 = 0.1;
pub const MAX_SPEED: f64 = 1.0;

type Vec2 = (f64, f64);

#[derive(Debug, Clone)]
pub struct ParticleWorld {
    spec: EnvSpec,
    pos: [Vec2; N_AGENTS],
    vel: [Vec2; N_AGENTS],
    landmarks: [Vec2; N_LANDMARKS],
    steps: usize,
    done: bool,
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl Default for ParticleWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl ParticleWorld {
    pub fn new() -> Self {
        ParticleWorld {
            spec: EnvSpec {
                name: EnvName::CoopNav,
                n_agents: N_AGENTS,
                obs_dims: vec![14; N_AGENTS],
                action_space: ActionSpace::Continuous {
                    dim: 2,
                    low: -1.0,
                    high: 1.0,
                },
                max_steps: MAX_STEPS,
                reward_mode: RewardMode::Team,
            },
            pos: [(0.0, 0.0); N_AGENTS],
            vel: [(0.0, 0.0); N_AGENTS],
            landmarks: [(0.0, 0.0); N_LANDMARKS],
            steps: 0,
            done: false,
        }
    }

    pub fn with_state(
        pos: [Vec2; N_AGENTS],
        vel: [Vec2; N_AGENTS],
        landmarks: [Vec2; N_LANDMARKS],
    ) -> Result<Self> {
        let finite = |v: Vec2| v.0.is_finite() && v.1.is_finite();
        if !pos.iter().all(|&p| finite(p))
            || !vel.iter().all(|&v| finite(v))
            || !landmarks.iter().all(|&l| finite(l))
        {
            return Err(Error::Config("particle state must be finite".into()));
        }
        let mut env = ParticleWorld::new();
        env.pos = pos;
        env.vel = vel;
        env.landmarks = landmarks;
        Ok(env)
    }

    pub fn positions(&self) -> &[Vec2; N_AGENTS] {
        &self.pos
    }

    pub fn velocities(&self) -> &[Vec2; N_AGENTS] {
        &self.vel
    }

    pub fn landmarks(&self) -> &[Vec2; N_LANDMARKS] {
        &self.landmarks
    }

    /// Team reward of the current configuration: negative coverage distance
    /// minus one per colliding pair.
    pub fn current_reward(&self) -> f64 {
        let mut reward = 0.0;
        for &lm in &self.landmarks {
            let min_dist = self
                .pos
                .iter()
                .map(|&p| dist(p, lm))
                .fold(f64::INFINITY, f64::min);
            reward -= min_dist;
        }
        for i in 0..N_AGENTS {
            for j in (i + 1)..N_AGENTS {
                if dist(self.pos[i], self.pos[j]) < 2.0 * AGENT_RADIUS {
                    reward -= 1.0;
                }
            }
        }
        reward
    }

    /// Number of colliding unordered agent pairs right now.
    pub fn colliding_pairs(&self) -> usize {
        let mut count = 0;
        for i in 0..N_AGENTS {
            for j in (i + 1)..N_AGENTS {
                if dist(self.pos[i], self.pos[j]) < 2.0 * AGENT_RADIUS {
                    count += 1;
                }
            }
        }
        count
    }

    /// Mean over landmarks of the closest agent's distance.
    pub fn mean_min_landmark_distance(&self) -> f64 {
        self.landmarks
            .iter()
            .map(|&lm| {
                self.pos
                    .iter()
                    .map(|&p| dist(p, lm))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / N_LANDMARKS as f64
    }
}

impl Environment for ParticleWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| -> Vec2 {
            (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        };
        for p in &mut self.pos {
            *p = draw(&mut rng);
        }
        for v in &mut self.vel {
            *v = (0.0, 0.0);
        }
        for l in &mut self.landmarks {
            *l = draw(&mut rng);
        }
        self.steps = 0;
        self.done = false;
        self.joint_obs()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        debug_assert!(!self.done, "step called on a finished episode");
        if actions.len() != N_AGENTS {
            return Err(Error::Contract(format!(
                "expected {N_AGENTS} actions, got {}",
                actions.len()
            )));
        }
        for (i, action) in actions.iter().enumerate() {
            let accel = match action {
                Action::Continuous(v) if v.len() == 2 => {
                    (v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0))
                }
                Action::Continuous(v) => {
                    return Err(Error::Contract(format!(
                        "agent {i} action dim {} vs expected 2",
                        v.len()
                    )))
                }
                Action::Discrete(_) => {
                    return Err(Error::Contract(
                        "discrete action passed to the particle world".into(),
                    ))
                }
            };
            let v = &mut self.vel[i];
            v.0 = v.0 * (1.0 - DAMPING) + accel.0 * DT;
            v.1 = v.1 * (1.0 - DAMPING) + accel.1 * DT;
            let speed = (v.0 * v.0 + v.1 * v.1).sqrt();
            if speed > MAX_SPEED {
                let scale = MAX_SPEED / speed;
                v.0 *= scale;
                v.1 *= scale;
            }
            self.pos[i].0 += v.0 * DT;
            self.pos[i].1 += v.1 * DT;
        }

        let reward = self.current_reward();
        self.steps += 1;
        if self.steps >= MAX_STEPS {
            self.done = true;
        }
        Ok(StepResult {
            obs: self.joint_obs(),
            rewards: vec![reward; N_AGENTS],
            done: self.done,
        })
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let own = self.pos[agent];
        let mut obs = vec![
            self.vel[agent].0,
            self.vel[agent].1,
            own.0,
            own.1,
        ];
        for &lm in &self.landmarks {
            obs.push(lm.0 - own.0);
            obs.push(lm.1 - own.1);
        }
        for (i, &p) in self.pos.iter().enumerate() {
            if i != agent {
                obs.push(p.0 - own.0);
                obs.push(p.1 - own.1);
            }
        }
        obs
    }

    fn clone_boxed(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn landmark_diagnostics(&self) -> Option<(f64, usize)> {
        Some((self.mean_min_landmark_distance(), self.colliding_pairs()))
    }
}
