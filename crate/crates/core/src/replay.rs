//! Experience storage and sampling.
//!
//! The buffer stores joint transitions FIFO up to capacity. Batches are
//! column-stacked copies of sampled transitions. A counterfactual view of a
//! batch pins the influencer's observation/action columns to fixed values
//! while leaving everything else byte-identical, which materializes the
//! restricted buffer used by the influence estimators without a second
//! physical store.

use std::collections::VecDeque;
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// Shape contract for every transition a buffer accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionShape {
    pub obs_dims: Vec<usize>,
    pub action_dims: Vec<usize>,
    /// Discrete action vectors must be probability simplexes.
    pub discrete: bool,
}

impl TransitionShape {
    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }
}

/// One joint environment step: the unit of replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

impl Transition {
    fn validate(&self, shape: &TransitionShape) -> Result<()> {
        let n = shape.n_agents();
        if self.obs.len() != n
            || self.actions.len() != n
            || self.rewards.len() != n
            || self.next_obs.len() != n
        {
            return Err(Error::Contract(format!(
                "per-agent lists must have length {n}: obs {}, actions {}, rewards {}, next_obs {}",
                self.obs.len(),
                self.actions.len(),
                self.rewards.len(),
                self.next_obs.len()
            )));
        }
        for (i, (o, no)) in self.obs.iter().zip(&self.next_obs).enumerate() {
            if o.len() != shape.obs_dims[i] || no.len() != shape.obs_dims[i] {
                return Err(Error::Shape(format!(
                    "agent {i} observation dim {} (next {}) vs expected {}",
                    o.len(),
                    no.len(),
                    shape.obs_dims[i]
                )));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.len() != shape.action_dims[i] {
                return Err(Error::Shape(format!(
                    "agent {i} action dim {} vs expected {}",
                    a.len(),
                    shape.action_dims[i]
                )));
            }
            if shape.discrete {
                if a.iter().any(|&v| v < 0.0) {
                    return Err(Error::Contract(format!(
                        "agent {i} discrete action has negative entries"
                    )));
                }
                let sum: f64 = a.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::Contract(format!(
                        "agent {i} discrete action sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    shape: TransitionShape,
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(shape: TransitionShape, capacity: usize) -> Self {
        ReplayBuffer {
            shape,
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn shape(&self) -> &TransitionShape {
        &self.shape
    }

    /// Insertion-order iteration, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Appends a transition, evicting the oldest entry past capacity.
    pub fn push(&mut self, transition: Transition) -> Result<()> {
        transition.validate(&self.shape)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(transition);
        Ok(())
    }

    /// Draws `b` indices independently and uniformly with replacement.
    ///
    /// Sampling with replacement is well-defined for any non-empty buffer,
    /// so a buffer smaller than `b` simply repeats entries; only an empty
    /// buffer is an error. The harness still warms up past a threshold
    /// before it starts learning.
    pub fn sample_uniform(&self, b: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        if self.entries.is_empty() {
            return Err(Error::InsufficientData {
                need: b.max(1),
                have: 0,
            });
        }
        let indices: Vec<usize> = (0..b)
            .map(|_| rng.random_range(0..self.entries.len()))
            .collect();
        Ok(self.gather(&indices))
    }

    fn gather(&self, indices: &[usize]) -> Batch {
        let n = self.shape.n_agents();
        let b = indices.len();
        let mut obs: Vec<Array2<f64>> = self
            .shape
            .obs_dims
            .iter()
            .map(|&d| Array2::zeros((b, d)))
            .collect();
        let mut next_obs = obs.clone();
        let mut actions: Vec<Array2<f64>> = self
            .shape
            .action_dims
            .iter()
            .map(|&d| Array2::zeros((b, d)))
            .collect();
        let mut rewards = Array2::zeros((b, n));
        let mut done = Array1::zeros(b);
        for (row, &idx) in indices.iter().enumerate() {
            let t = &self.entries[idx];
            for agent in 0..n {
                for (c, v) in t.obs[agent].iter().enumerate() {
                    obs[agent][(row, c)] = *v;
                }
                for (c, v) in t.next_obs[agent].iter().enumerate() {
                    next_obs[agent][(row, c)] = *v;
                }
                for (c, v) in t.actions[agent].iter().enumerate() {
                    actions[agent][(row, c)] = *v;
                }
                rewards[(row, agent)] = t.rewards[agent];
            }
            done[row] = if t.done { 1.0 } else { 0.0 };
        }
        Batch {
            obs,
            actions,
            rewards,
            next_obs,
            done,
        }
    }

    /// Serializes the buffer: versioned header plus packed transitions.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"CDXB")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.shape.n_agents() as u32).to_le_bytes())?;
        w.write_all(&[u8::from(self.shape.discrete)])?;
        for &d in &self.shape.obs_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &d in &self.shape.action_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for t in &self.entries {
            for agent_obs in &t.obs {
                for v in agent_obs {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for agent_act in &t.actions {
                for v in agent_act {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for v in &t.rewards {
                w.write_all(&v.to_le_bytes())?;
            }
            for agent_obs in &t.next_obs {
                for v in agent_obs {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.write_all(&[u8::from(t.done)])?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CDXB" {
            return Err(Error::Format("bad buffer magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported buffer version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let discrete = flag[0] != 0;
        let obs_dims: Vec<usize> = (0..n)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<_>>()?;
        let action_dims: Vec<usize> = (0..n)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<_>>()?;
        let capacity = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let shape = TransitionShape {
            obs_dims,
            action_dims,
            discrete,
        };
        let mut buffer = ReplayBuffer::new(shape.clone(), capacity);
        for _ in 0..count {
            let obs = read_agent_vecs(&mut r, &shape.obs_dims)?;
            let actions = read_agent_vecs(&mut r, &shape.action_dims)?;
            let rewards = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
            let next_obs = read_agent_vecs(&mut r, &shape.obs_dims)?;
            r.read_exact(&mut flag)?;
            buffer.entries.push_back(Transition {
                obs,
                actions,
                rewards,
                next_obs,
                done: flag[0] != 0,
            });
        }
        Ok(buffer)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_agent_vecs<R: Read>(r: &mut R, dims: &[usize]) -> Result<Vec<Vec<f64>>> {
    dims.iter()
        .map(|&d| (0..d).map(|_| read_f64(r)).collect())
        .collect()
}

/// Column-stacked arrays of a sampled transition set.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Per agent: `b x obs_dim`.
    pub obs: Vec<Array2<f64>>,
    /// Per agent: `b x action_dim`.
    pub actions: Vec<Array2<f64>>,
    /// `b x n_agents`.
    pub rewards: Array2<f64>,
    pub next_obs: Vec<Array2<f64>>,
    /// `b`, encoded 0/1.
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }
}

/// Returns a batch with the influencer's observation and action columns
/// overwritten by the pinned values in every row. Rewards, next observations,
/// and done flags are untouched.
pub fn counterfactual_view(
    batch: &Batch,
    pinned_obs: &[f64],
    pinned_action: &[f64],
    influencer_index: usize,
) -> Result<Batch> {
    if influencer_index >= batch.n_agents() {
        return Err(Error::Shape(format!(
            "influencer index {influencer_index} out of range for {} agents",
            batch.n_agents()
        )));
    }
    if pinned_obs.len() != batch.obs[influencer_index].ncols() {
        return Err(Error::Shape(format!(
            "pinned obs dim {} vs column dim {}",
            pinned_obs.len(),
            batch.obs[influencer_index].ncols()
        )));
    }
    if pinned_action.len() != batch.actions[influencer_index].ncols() {
        return Err(Error::Shape(format!(
            "pinned action dim {} vs column dim {}",
            pinned_action.len(),
            batch.actions[influencer_index].ncols()
        )));
    }
    let mut view = batch.clone();
    for mut row in view.obs[influencer_index].rows_mut() {
        for (slot, v) in row.iter_mut().zip(pinned_obs) {
            *slot = *v;
        }
    }
    for mut row in view.actions[influencer_index].rows_mut() {
        for (slot, v) in row.iter_mut().zip(pinned_action) {
            *slot = *v;
        }
    }
    Ok(view)
}
