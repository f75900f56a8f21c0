//! Sparse Secret Room: a 25x25 grid split into one large room and three
//! small rooms, with momentary switches controlling the doors.
//!
//! Canonical layout (x grows east, y grows south):
//!
//! - The wall column `x = 12` separates the large room (`x < 12`) from the
//!   right half. Door cells sit in that column at `(12, 4)`, `(12, 12)`, and
//!   `(12, 20)`, one per small room.
//! - Horizontal walls at `y = 8` and `y = 16` (for `x > 12`) split the right
//!   half into three small rooms: top (`y < 8`), middle (`8 < y < 16`), and
//!   bottom (`y > 16`).
//! - The large-room switch at `(6, 12)` opens all three doors while an agent
//!   stands on it; the switch inside each small room, at `(18, 4)`,
//!   `(18, 12)`, and `(18, 20)`, opens only that room's door.
//!
//! Doors are open exactly while a controlling switch is occupied. Crossing a
//! door frame requires the door to be open both to enter and to leave the
//! frame cell, so an agent can never change rooms through a closed door.
//! Both agents inside the target room (the middle one) ends the episode with
//! a team reward of 1000.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_discrete_actions, Action, ActionSpace, EnvName, EnvSpec, Environment, RewardMode,
    StepResult, DIRECTIONS, GRID_ACTIONS,
};
use crate::Result;

pub const GRID: i64 = 25;
pub const MAX_STEPS: usize = 300;
pub const WIN_REWARD: f64 = 1000.0;
pub const WALL_X: i64 = 12;
pub const DOORS: [(i64, i64); 3] = [(12, 4), (12, 12), (12, 20)];
pub const LARGE_SWITCH: (i64, i64) = (6, 12);
pub const ROOM_SWITCHES: [(i64, i64); 3] = [(18, 4), (18, 12), (18, 20)];
pub const TARGET_ROOM: usize = 1;

type Cell = (i64, i64);

/// Where a cell sits in the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Room {
    Large,
    Small(usize),
    Doorway(usize),
}

#[derive(Debug, Clone)]
pub struct SecretRoom {
    spec: EnvSpec,
    agents: [Cell; 2],
    steps: usize,
    done: bool,
}

fn in_grid(c: Cell) -> bool {
    c.0 >= 0 && c.0 < GRID && c.1 >= 0 && c.1 < GRID
}

pub fn door_at(c: Cell) -> Option<usize> {
    DOORS.iter().position(|&d| d == c)
}

/// Interior wall cells (grid edges are implicit walls).
pub fn is_wall(c: Cell) -> bool {
    if c.0 == WALL_X {
        return door_at(c).is_none();
    }
    c.0 > WALL_X && (c.1 == 8 || c.1 == 16)
}

pub fn room_of(c: Cell) -> Room {
    if let Some(d) = door_at(c) {
        return Room::Doorway(d);
    }
    debug_assert!(!is_wall(c), "room_of called on a wall cell");
    if c.0 < WALL_X {
        Room::Large
    } else if c.1 < 8 {
        Room::Small(0)
    } else if c.1 < 16 {
        Room::Small(1)
    } else {
        Room::Small(2)
    }
}

fn norm(v: i64) -> f64 {
    v as f64 / (GRID - 1) as f64
}

impl Default for SecretRoom {
    fn default() -> Self {
        Self::new()
    }
}

impl SecretRoom {
    pub fn new() -> Self {
        SecretRoom {
            spec: EnvSpec {
                name: EnvName::SecretRoom,
                n_agents: 2,
                obs_dims: vec![10, 10],
                action_space: ActionSpace::Discrete(GRID_ACTIONS),
                max_steps: MAX_STEPS,
                reward_mode: RewardMode::Team,
            },
            agents: [(2, 2), (4, 4)],
            steps: 0,
            done: false,
        }
    }

    /// Places agents directly on any two distinct non-wall cells.
    pub fn with_state(agents: [Cell; 2]) -> Result<Self> {
        for &a in &agents {
            if !in_grid(a) || is_wall(a) {
                return Err(crate::Error::Config(format!(
                    "agent cell {a:?} is outside the grid or inside a wall"
                )));
            }
        }
        if agents[0] == agents[1] {
            return Err(crate::Error::Config("agents must start apart".into()));
        }
        let mut env = SecretRoom::new();
        env.agents = agents;
        Ok(env)
    }

    pub fn agent_pos(&self, i: usize) -> Cell {
        self.agents[i]
    }

    /// Door states implied by the current agent positions.
    pub fn door_states(&self) -> [bool; 3] {
        let mut open = [false; 3];
        for &a in &self.agents {
            if a == LARGE_SWITCH {
                open = [true; 3];
            }
            for (j, &s) in ROOM_SWITCHES.iter().enumerate() {
                if a == s {
                    open[j] = true;
                }
            }
        }
        open
    }

    fn move_agent(&mut self, i: usize, dir: (i64, i64), doors: &[bool; 3]) {
        let src = self.agents[i];
        let dest = (src.0 + dir.0, src.1 + dir.1);
        if dest == src {
            return;
        }
        if !in_grid(dest) || is_wall(dest) || dest == self.agents[1 - i] {
            return;
        }
        // A door frame can only be crossed while its door is open.
        if let Some(d) = door_at(dest) {
            if !doors[d] {
                return;
            }
        }
        if let Some(d) = door_at(src) {
            if !doors[d] {
                return;
            }
        }
        self.agents[i] = dest;
    }
}

impl Environment for SecretRoom {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Spawns stay clear of the large-room switch so every door reads
        // closed in the reset observation.
        let mut draw = |taken: &[Cell]| loop {
            let c = (rng.random_range(0..WALL_X), rng.random_range(0..GRID));
            if c != LARGE_SWITCH && !taken.contains(&c) {
                return c;
            }
        };
        let a0 = draw(&[]);
        let a1 = draw(&[a0]);
        self.agents = [a0, a1];
        self.steps = 0;
        self.done = false;
        self.joint_obs()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        debug_assert!(!self.done, "step called on a finished episode");
        let idx = check_discrete_actions(actions, 2, GRID_ACTIONS)?;
        // Door states are sampled once from the start-of-step positions so
        // both agents move under the same world.
        let doors = self.door_states();
        for i in 0..2 {
            self.move_agent(i, DIRECTIONS[idx[i]], &doors);
        }

        let mut reward = 0.0;
        let solved = self
            .agents
            .iter()
            .all(|&a| room_of(a) == Room::Small(TARGET_ROOM));
        if solved {
            reward = WIN_REWARD;
            self.done = true;
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
        let doors = self.door_states();
        let mut obs = vec![
            norm(own.0),
            norm(own.1),
            norm(mate.0),
            norm(mate.1),
        ];
        obs.extend(doors.iter().map(|&d| if d { 1.0 } else { 0.0 }));
        for room in 0..3 {
            obs.push(if room == TARGET_ROOM { 1.0 } else { 0.0 });
        }
        obs
    }

    fn clone_boxed(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
