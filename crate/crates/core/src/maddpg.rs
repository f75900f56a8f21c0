//! Centralized-critic, decentralized-actor learning.
//!
//! Each agent owns a deterministic actor over its local observation and a
//! critic over the joint observation-action vector, plus target copies of
//! both. Critics regress on bootstrapped targets built from the target
//! networks; those targets are computed outside the gradient tape, so no
//! gradient can flow into target parameters or into the policies substituted
//! inside the targets.

use ndarray::{Array2, Axis};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::{Action, ActionSpace, EnvSpec};
use crate::replay::Batch;
use crate::tensor::tape::{GradBundle, NodeId, ParamMode, Tape, TapedNet};
use crate::tensor::{init_glorot, softmax_rows, soft_update, Net, OptimState, OutputActivation};
use crate::{Error, Result};

/// Action-selection mode: training explores, evaluation is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Train,
    Eval,
}

/// Exploration parameters for [`select_action`].
#[derive(Debug, Clone, Copy)]
pub struct Exploration {
    /// Relaxation temperature for discrete sampling.
    pub temperature: f64,
    /// Gaussian noise scale for continuous actions.
    pub noise_sigma: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration {
            temperature: 1.0,
            noise_sigma: 0.1,
        }
    }
}

/// An action in both the form the environment executes and the vector form
/// stored for replay.
#[derive(Debug, Clone)]
pub struct SelectedAction {
    pub exec: Action,
    pub vector: Vec<f64>,
}

/// Per-agent actors, critics, and their target copies.
#[derive(Debug, Clone)]
pub struct AgentEnsemble {
    pub n_agents: usize,
    pub obs_dims: Vec<usize>,
    pub action_space: ActionSpace,
    pub gamma: f64,
    pub influencer: usize,
    pub actors: Vec<Net>,
    pub critics: Vec<Net>,
    pub target_actors: Vec<Net>,
    pub target_critics: Vec<Net>,
    pub actor_opts: Vec<OptimState>,
    pub critic_opts: Vec<OptimState>,
}

impl AgentEnsemble {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: &EnvSpec,
        hidden: &[usize],
        layer_norm: bool,
        actor_lr: f64,
        critic_lr: f64,
        gamma: f64,
        influencer: usize,
        seed: u64,
    ) -> Result<Self> {
        if influencer >= spec.n_agents {
            return Err(Error::Config(format!(
                "influencer index {influencer} out of range for {} agents",
                spec.n_agents
            )));
        }
        let act_dim = spec.action_space.vector_dim();
        let joint_dim: usize = spec.obs_dims.iter().sum::<usize>() + act_dim * spec.n_agents;
        let actor_out = match spec.action_space {
            ActionSpace::Discrete(_) => OutputActivation::SoftmaxLogits,
            ActionSpace::Continuous { .. } => OutputActivation::Tanh,
        };

        let mut actors = Vec::new();
        let mut critics = Vec::new();
        for i in 0..spec.n_agents {
            let mut actor_dims = vec![spec.obs_dims[i]];
            actor_dims.extend_from_slice(hidden);
            actor_dims.push(act_dim);
            let actor = init_glorot(&actor_dims, derive_seed(seed, 0x0A, i))?
                .with_layer_norm(layer_norm)
                .with_output_activation(actor_out);

            let mut critic_dims = vec![joint_dim];
            critic_dims.extend_from_slice(hidden);
            critic_dims.push(1);
            let critic = init_glorot(&critic_dims, derive_seed(seed, 0x0C, i))?
                .with_layer_norm(layer_norm);
            actors.push(actor);
            critics.push(critic);
        }
        let target_actors = actors.clone();
        let target_critics = critics.clone();
        let actor_opts = actors
            .iter()
            .map(|n| OptimState::adam(actor_lr, n))
            .collect::<Result<Vec<_>>>()?;
        let critic_opts = critics
            .iter()
            .map(|n| OptimState::adam(critic_lr, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentEnsemble {
            n_agents: spec.n_agents,
            obs_dims: spec.obs_dims.clone(),
            action_space: spec.action_space,
            gamma,
            influencer,
            actors,
            critics,
            target_actors,
            target_critics,
            actor_opts,
            critic_opts,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_space.vector_dim()
    }

    /// Agents other than the influencer, in index order.
    pub fn influencees(&self) -> Vec<usize> {
        (0..self.n_agents).filter(|&i| i != self.influencer).collect()
    }

    /// Deterministic current-policy action vectors for one agent on a batch
    /// of its observations: softmax probabilities for discrete actors,
    /// tanh-bounded outputs for continuous ones.
    pub fn policy_vectors(&self, agent: usize, obs: &Array2<f64>) -> Array2<f64> {
        deterministic_output(&self.actors[agent], &self.action_space, obs)
    }

    pub fn target_policy_vectors(&self, agent: usize, obs: &Array2<f64>) -> Array2<f64> {
        deterministic_output(&self.target_actors[agent], &self.action_space, obs)
    }

    /// Bootstrapped regression targets for every agent:
    /// `y_i = r_i + gamma * (1 - done) * Q_target_i(x', mu_target(x'))`.
    ///
    /// Computed with plain forwards, never on a tape.
    pub fn td_targets(&self, batch: &Batch) -> Array2<f64> {
        let b = batch.len();
        let next_actions: Vec<Array2<f64>> = (0..self.n_agents)
            .map(|j| self.target_policy_vectors(j, &batch.next_obs[j]))
            .collect();
        let next_joint = joint_input(&batch.next_obs, &next_actions);
        let mut targets = Array2::zeros((b, self.n_agents));
        for i in 0..self.n_agents {
            let q_next = self.target_critics[i].forward_batch(&next_joint);
            for row in 0..b {
                let mask = 1.0 - batch.done[row];
                targets[(row, i)] =
                    batch.rewards[(row, i)] + self.gamma * mask * q_next[(row, 0)];
            }
        }
        targets
    }

    /// Soft-updates every target network toward its online twin.
    pub fn update_targets(&mut self, tau: f64) {
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            soft_update(t, o, tau);
        }
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, o, tau);
        }
    }
}

/// Mixes a stream tag and an index into a base seed.
pub fn derive_seed(base: u64, stream: u64, index: usize) -> u64 {
    // SplitMix64 finalizer over the combined words.
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn deterministic_output(actor: &Net, space: &ActionSpace, obs: &Array2<f64>) -> Array2<f64> {
    let out = actor.forward_batch(obs);
    match space {
        ActionSpace::Discrete(_) => softmax_rows(&out),
        ActionSpace::Continuous { .. } => out,
    }
}

/// Column-concatenates per-agent observations then per-agent actions into
/// the critic input layout.
pub fn joint_input(obs: &[Array2<f64>], actions: &[Array2<f64>]) -> Array2<f64> {
    let b = obs[0].nrows();
    let total: usize =
        obs.iter().map(|o| o.ncols()).sum::<usize>() + actions.iter().map(|a| a.ncols()).sum::<usize>();
    let mut out = Array2::zeros((b, total));
    let mut col = 0;
    for part in obs.iter().chain(actions.iter()) {
        out.slice_mut(ndarray::s![.., col..col + part.ncols()])
            .assign(part);
        col += part.ncols();
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn one_hot(k: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[idx] = 1.0;
    v
}

/// Selects an action from an actor's output.
///
/// Discrete training samples a relaxed one-hot by softmax over
/// Gumbel-perturbed logits; the hard argmax goes to the environment while
/// the relaxed vector is kept for replay. Discrete evaluation takes the
/// argmax one-hot. Continuous training adds clipped Gaussian noise;
/// continuous evaluation returns the raw bounded output.
pub fn select_action(
    actor: &Net,
    obs: &[f64],
    space: &ActionSpace,
    mode: ActionMode,
    explore: &Exploration,
    rng: &mut ChaCha8Rng,
) -> SelectedAction {
    let raw = actor.forward(obs);
    match space {
        ActionSpace::Discrete(k) => match mode {
            ActionMode::Eval => {
                let idx = argmax(&raw);
                SelectedAction {
                    exec: Action::Discrete(idx),
                    vector: one_hot(*k, idx),
                }
            }
            ActionMode::Train => {
                let mut perturbed: Vec<f64> = raw
                    .iter()
                    .map(|&logit| {
                        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        let gumbel = -(-u.ln()).ln();
                        (logit + gumbel) / explore.temperature
                    })
                    .collect();
                let max = perturbed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in &mut perturbed {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in &mut perturbed {
                    *v /= sum;
                }
                let idx = argmax(&perturbed);
                SelectedAction {
                    exec: Action::Discrete(idx),
                    vector: perturbed,
                }
            }
        },
        ActionSpace::Continuous { low, high, .. } => {
            let vector: Vec<f64> = match mode {
                ActionMode::Eval => raw,
                ActionMode::Train => {
                    let normal = Normal::new(0.0, explore.noise_sigma).expect("valid sigma");
                    raw.iter()
                        .map(|&v| (v + normal.sample(rng)).clamp(*low, *high))
                        .collect()
                }
            };
            SelectedAction {
                exec: Action::Continuous(vector.clone()),
                vector,
            }
        }
    }
}

/// Builds the actor's deterministic action node on a tape: softmax of logits
/// for discrete actors, the (tanh) output otherwise. Returns the taped actor
/// so its parameter gradients can be read off.
pub fn policy_on_tape(
    actor: &Net,
    space: &ActionSpace,
    tape: &mut Tape,
    obs_node: NodeId,
    mode: ParamMode,
) -> (TapedNet, NodeId) {
    let taped = actor.forward_on_tape(tape, obs_node, mode);
    let action = match space {
        ActionSpace::Discrete(_) => tape.softmax(taped.output),
        ActionSpace::Continuous { .. } => taped.output,
    };
    (taped, action)
}

/// Mean-squared Bellman error of agent `i`'s critic on a batch, with its
/// gradient bundle. The target is a constant: gradients reach only the
/// online critic.
pub fn critic_loss(ensemble: &AgentEnsemble, batch: &Batch, i: usize) -> (f64, GradBundle) {
    let targets = ensemble.td_targets(batch);
    critic_loss_with_targets(ensemble, batch, i, &targets)
}

/// As [`critic_loss`] but reusing precomputed targets (one `td_targets` call
/// can serve every agent in an update).
pub fn critic_loss_with_targets(
    ensemble: &AgentEnsemble,
    batch: &Batch,
    i: usize,
    targets: &Array2<f64>,
) -> (f64, GradBundle) {
    let mut tape = Tape::new();
    let joint = joint_input(&batch.obs, &batch.actions);
    let input = tape.constant(joint);
    let taped = ensemble.critics[i].forward_on_tape(&mut tape, input, ParamMode::Trainable);
    let y = tape.constant(targets.column(i).to_owned().insert_axis(Axis(1)));
    let diff = tape.sub(taped.output, y);
    let loss = tape.mean_sq_row_norm(diff);
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss);
    let bundle = GradBundle::from_taped(&taped, &mut grads, &ensemble.critics[i]);
    (value, bundle)
}

/// Expected return objective for agent `i`'s actor: the critic evaluated at
/// the joint action with every slot substituted by the current policies,
/// differentiable only through agent `i`'s slot. Returns the objective value
/// and its gradients for actor `i` (an ascent direction).
pub fn policy_objective(ensemble: &AgentEnsemble, batch: &Batch, i: usize) -> (f64, GradBundle) {
    let mut tape = Tape::new();
    let (objective, taped_actor) = policy_objective_node(ensemble, batch, i, &mut tape);
    let value = tape.scalar(objective);
    let mut grads = tape.backward(objective);
    let bundle = GradBundle::from_taped(&taped_actor, &mut grads, &ensemble.actors[i]);
    (value, bundle)
}

/// Tape-level builder for the policy objective, shared with the influencer's
/// combined loss. Returns the scalar objective node and agent `i`'s taped
/// actor.
pub(crate) fn policy_objective_node(
    ensemble: &AgentEnsemble,
    batch: &Batch,
    i: usize,
    tape: &mut Tape,
) -> (NodeId, TapedNet) {
    let obs_node = tape.constant(batch.obs[i].clone());
    let (taped, action) = policy_on_tape(
        &ensemble.actors[i],
        &ensemble.action_space,
        tape,
        obs_node,
        ParamMode::Trainable,
    );
    let objective = objective_from_action(ensemble, batch, i, tape, action);
    (objective, taped)
}

/// The critic evaluated at the substituted joint action, with agent `i`'s
/// action slot wired to an existing tape node; other agents' substituted
/// actions enter as constants.
pub(crate) fn objective_from_action(
    ensemble: &AgentEnsemble,
    batch: &Batch,
    i: usize,
    tape: &mut Tape,
    action: NodeId,
) -> NodeId {
    let mut action_nodes = Vec::with_capacity(ensemble.n_agents);
    for j in 0..ensemble.n_agents {
        if j == i {
            action_nodes.push(action);
        } else {
            // Other agents' substituted actions are data for agent i.
            let vectors = ensemble.policy_vectors(j, &batch.obs[j]);
            action_nodes.push(tape.constant(vectors));
        }
    }
    let mut parts: Vec<NodeId> = batch
        .obs
        .iter()
        .map(|o| tape.constant(o.clone()))
        .collect();
    parts.extend(action_nodes);
    let joint = tape.concat_cols(&parts);
    let taped_critic =
        ensemble.critics[i].forward_on_tape(tape, joint, ParamMode::Frozen);
    tape.mean_all(taped_critic.output)
}
