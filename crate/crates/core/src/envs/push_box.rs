//! Sparse Push-Box: a 15x15 room, two agents, one heavy box.
//!
//! The box moves one cell in direction `d` only when both agents are
//! cardinally adjacent to it, both select `d`, and the destination cell is
//! free. Pushing it into any boundary cell ends the episode with a team
//! reward of 1000; otherwise rewards are zero and the episode ends after
//! 300 steps.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_discrete_actions, Action, ActionSpace, EnvName, EnvSpec, Environment, RewardMode,
    StepResult, DIRECTIONS, GRID_ACTIONS,
};
use crate::Result;

pub const GRID: i64 = 15;
pub const MAX_STEPS: usize = 300;
pub const WIN_REWARD: f64 = 1000.0;

type Cell = (i64, i64);

#[derive(Debug, Clone)]
pub struct PushBox {
    spec: EnvSpec,
    agents: [Cell; 2],
    box_pos: Cell,
    steps: usize,
    done: bool,
}

fn in_grid(c: Cell) -> bool {
    c.0 >= 0 && c.0 < GRID && c.1 >= 0 && c.1 < GRID
}

fn on_boundary(c: Cell) -> bool {
    c.0 == 0 || c.0 == GRID - 1 || c.1 == 0 || c.1 == GRID - 1
}

fn adjacent(a: Cell, b: Cell) -> bool {
    (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1
}

fn norm(v: i64) -> f64 {
    v as f64 / (GRID - 1) as f64
}

impl Default for PushBox {
    fn default() -> Self {
        Self::new()
    }
}

impl PushBox {
    pub fn new() -> Self {
        PushBox {
            spec: EnvSpec {
                name: EnvName::PushBox,
                n_agents: 2,
                obs_dims: vec![6, 6],
                action_space: ActionSpace::Discrete(GRID_ACTIONS),
                max_steps: MAX_STEPS,
                reward_mode: RewardMode::Team,
            },
            agents: [(1, 1), (2, 2)],
            box_pos: (7, 7),
            steps: 0,
            done: false,
        }
    }

    /// Places entities directly; interior cells only, all distinct.
    pub fn with_state(agents: [Cell; 2], box_pos: Cell) -> Result<Self> {
        let interior = |c: Cell| c.0 >= 1 && c.0 < GRID - 1 && c.1 >= 1 && c.1 < GRID - 1;
        if !interior(agents[0]) || !interior(agents[1]) || !interior(box_pos) {
            return Err(crate::Error::Config(
                "push-box entities must start on interior cells".into(),
            ));
        }
        if agents[0] == agents[1] || agents[0] == box_pos || agents[1] == box_pos {
            return Err(crate::Error::Config(
                "push-box entities must start on distinct cells".into(),
            ));
        }
        let mut env = PushBox::new();
        env.agents = agents;
        env.box_pos = box_pos;
        Ok(env)
    }

    pub fn box_pos(&self) -> Cell {
        self.box_pos
    }

    pub fn agent_pos(&self, i: usize) -> Cell {
        self.agents[i]
    }
}

impl Environment for PushBox {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Interior cells keep the box off the boundary (no instant reward)
        // and agents clear of walls.
        let mut draw = |taken: &[Cell]| loop {
            let c = (rng.random_range(1..GRID - 1), rng.random_range(1..GRID - 1));
            if !taken.contains(&c) {
                return c;
            }
        };
        let a0 = draw(&[]);
        let a1 = draw(&[a0]);
        let bx = draw(&[a0, a1]);
        self.agents = [a0, a1];
        self.box_pos = bx;
        self.steps = 0;
        self.done = false;
        self.joint_obs()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        debug_assert!(!self.done, "step called on a finished episode");
        let idx = check_discrete_actions(actions, 2, GRID_ACTIONS)?;
        let dirs = [DIRECTIONS[idx[0]], DIRECTIONS[idx[1]]];

        // Box motion resolves first: both agents adjacent, same non-stay
        // direction, destination inside the grid and not under an agent.
        let mut reward = 0.0;
        if idx[0] == idx[1]
            && idx[0] != 4
            && adjacent(self.agents[0], self.box_pos)
            && adjacent(self.agents[1], self.box_pos)
        {
            let dest = (self.box_pos.0 + dirs[0].0, self.box_pos.1 + dirs[0].1);
            if in_grid(dest) && dest != self.agents[0] && dest != self.agents[1] {
                self.box_pos = dest;
                if on_boundary(dest) {
                    reward = WIN_REWARD;
                    self.done = true;
                }
            }
        }

        // Agents then move in index order; blocked moves are no-ops.
        for i in 0..2 {
            let dest = (self.agents[i].0 + dirs[i].0, self.agents[i].1 + dirs[i].1);
            let other = self.agents[1 - i];
            if in_grid(dest) && dest != self.box_pos && dest != other {
                self.agents[i] = dest;
            }
        }

        self.steps += 1;
        if self.steps >= MAX_STEPS {
            self.done = true;
        }
        Ok(StepResult {
            obs: self.joint_obs(),
            rewards: vec![reward, reward],
            done: self.done,
        })
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let own = self.agents[agent];
        let mate = self.agents[1 - agent];
        vec![
            norm(own.0),
            norm(own.1),
            norm(mate.0),
            norm(mate.1),
            norm(self.box_pos.0),
            norm(self.box_pos.1),
        ]
    }

    fn clone_boxed(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UP: usize = 0;
    const DOWN: usize = 1;
    const LEFT: usize = 2;
    const RIGHT: usize = 3;
    const STAY: usize = 4;

    fn acts(a: usize, b: usize) -> [Action; 2] {
        [Action::Discrete(a), Action::Discrete(b)]
    }

    #[test]
    fn same_seed_same_initial_obs_bytes() {
        let mut a = PushBox::new();
        let mut b = PushBox::new();
        let oa = a.reset(123);
        let ob = b.reset(123);
        for (ra, rb) in oa.iter().zip(&ob) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn reset_places_box_off_boundary() {
        let mut env = PushBox::new();
        for seed in 0..200 {
            env.reset(seed);
            assert!(!on_boundary(env.box_pos()), "seed {seed}");
        }
    }

    #[test]
    fn aligned_push_moves_box() {
        // One agent west of the box, one north; both push east.
        let mut env = PushBox::with_state([(6, 7), (7, 6)], (7, 7)).unwrap();
        let r = env.step(&acts(RIGHT, RIGHT)).unwrap();
        assert_eq!(env.box_pos(), (8, 7));
        assert_eq!(r.rewards, vec![0.0, 0.0]);
        // The west agent follows into the vacated cell.
        assert_eq!(env.agent_pos(0), (7, 7));
    }

    #[test]
    fn disagreeing_pushes_leave_box_still() {
        let mut env = PushBox::with_state([(6, 7), (7, 6)], (7, 7)).unwrap();
        env.step(&acts(RIGHT, DOWN)).unwrap();
        assert_eq!(env.box_pos(), (7, 7));
    }

    #[test]
    fn lone_agent_cannot_push() {
        let mut env = PushBox::with_state([(6, 7), (3, 3)], (7, 7)).unwrap();
        env.step(&acts(RIGHT, STAY)).unwrap();
        assert_eq!(env.box_pos(), (7, 7));
    }

    #[test]
    fn push_blocked_when_agent_occupies_destination() {
        let mut env = PushBox::with_state([(6, 7), (8, 7)], (7, 7)).unwrap();
        env.step(&acts(RIGHT, RIGHT)).unwrap();
        assert_eq!(env.box_pos(), (7, 7));
    }

    #[test]
    fn box_on_boundary_wins_once() {
        // Pushing from behind and beside; the destination must be free.
        let mut env = PushBox::with_state([(3, 7), (2, 6)], (2, 7)).unwrap();
        let r = env.step(&acts(LEFT, LEFT)).unwrap();
        assert_eq!(env.box_pos(), (1, 7));
        assert_eq!(r.rewards, vec![0.0, 0.0]);
        assert!(!r.done);
        // One more aligned push reaches x = 0, the boundary.
        let mut env = PushBox::with_state([(2, 7), (1, 6)], (1, 7)).unwrap();
        let r = env.step(&acts(LEFT, LEFT)).unwrap();
        assert_eq!(env.box_pos(), (0, 7));
        assert_eq!(r.rewards, vec![WIN_REWARD, WIN_REWARD]);
        assert!(r.done);
    }

    #[test]
    fn moves_off_grid_and_into_occupied_cells_are_noops() {
        let mut env = PushBox::with_state([(1, 1), (1, 2)], (7, 7)).unwrap();
        // Agent 0 tries to leave the grid (up then left at the corner edge).
        env.step(&acts(UP, STAY)).unwrap();
        assert_eq!(env.agent_pos(0), (1, 0));
        env.step(&acts(UP, STAY)).unwrap();
        assert_eq!(env.agent_pos(0), (1, 0));
        // Agent 1 tries to walk into agent 0.
        let mut env = PushBox::with_state([(4, 4), (4, 5)], (7, 7)).unwrap();
        env.step(&acts(STAY, UP)).unwrap();
        assert_eq!(env.agent_pos(1), (4, 5));
        // Agent 0 tries to walk into the box.
        let mut env = PushBox::with_state([(6, 7), (2, 2)], (7, 7)).unwrap();
        env.step(&acts(RIGHT, STAY)).unwrap();
        assert_eq!(env.agent_pos(0), (6, 7));
    }

    #[test]
    fn episode_times_out_at_300_steps() {
        let mut env = PushBox::new();
        env.reset(9);
        let mut done = false;
        for step in 0..MAX_STEPS {
            let r = env.step(&acts(STAY, STAY)).unwrap();
            done = r.done;
            assert_eq!(done, step + 1 == MAX_STEPS);
        }
        assert!(done);
    }

    #[test]
    fn observation_normalization_endpoints() {
        let env = PushBox::with_state([(1, 1), (13, 13)], (7, 7)).unwrap();
        let obs0 = env.observe(0);
        assert_eq!(&obs0[0..2], &[1.0 / 14.0, 1.0 / 14.0]);
        let env_corner = {
            let mut e = PushBox::new();
            e.agents = [(0, 0), (14, 14)];
            e
        };
        let obs = env_corner.observe(0);
        assert_eq!(&obs[0..2], &[0.0, 0.0]);
        let obs = env_corner.observe(1);
        assert_eq!(&obs[0..2], &[1.0, 1.0]);
    }

    #[test]
    fn trajectory_determinism_bytes() {
        let run = |seed: u64| -> Vec<u64> {
            let mut env = PushBox::new();
            env.reset(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut bits = Vec::new();
            for _ in 0..50 {
                let a = rng.random_range(0..GRID_ACTIONS);
                let b = rng.random_range(0..GRID_ACTIONS);
                let r = env.step(&acts(a, b)).unwrap();
                for row in &r.obs {
                    bits.extend(row.iter().map(|v| v.to_bits()));
                }
                bits.extend(r.rewards.iter().map(|v| v.to_bits()));
                if r.done {
                    break;
                }
            }
            bits
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn box_moves_at_most_one_cell_and_only_in_agreed_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut env = PushBox::new();
        env.reset(12);
        for _ in 0..500 {
            let before = env.box_pos();
            let a = rng.random_range(0..GRID_ACTIONS);
            let b = rng.random_range(0..GRID_ACTIONS);
            let r = env.step(&acts(a, b)).unwrap();
            let after = env.box_pos();
            let delta = (after.0 - before.0, after.1 - before.1);
            let dist = delta.0.abs() + delta.1.abs();
            assert!(dist <= 1);
            if dist == 1 {
                assert_eq!(a, b);
                assert_eq!(delta, DIRECTIONS[a]);
            }
            if r.done {
                env.reset(13);
            }
        }
    }
}
