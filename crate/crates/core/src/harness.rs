//! Experiment orchestration: the training loop, ablation modes, evaluation,
//! and metrics emission.
//!
//! One `Trainer` owns one run: a single environment, the agent ensemble, the
//! replay buffer, and one estimator kit per influencer (one kit normally,
//! one per agent in symmetric mode). Every random draw comes from streams
//! derived from the run seed, so a (config, seed) pair reproduces its
//! metrics CSV byte for byte.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_ensemble, EnsembleCheckpoint};
use crate::config::{AblationMode, RunConfig};
use crate::envs::{make_env, Action, ActionSpace, Environment};
use crate::influence::{
    influence_multi, influence_single, influencer_policy_loss, train_central_estimator,
    train_clones, CentralEstimator, CloneSet, EstimatorKind, Regularizer,
};
use crate::intrinsic::{
    compose_rewards, novelty_score, train_autoencoder, IntrinsicConfig, NoveltyAutoencoder,
    ShapingInputs,
};
use crate::maddpg::{
    critic_loss_with_targets, derive_seed, policy_objective, select_action, ActionMode,
    AgentEnsemble, Exploration,
};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::replay::{ReplayBuffer, Transition, TransitionShape};
use crate::tensor::tape::clip_gradients;
use crate::{Error, Result};

// Seed-stream tags.
const STREAM_INIT: u64 = 0x01;
const STREAM_NETS: u64 = 0x02;
const STREAM_ENV: u64 = 0x03;
const STREAM_ACTIONS: u64 = 0x04;
const STREAM_SAMPLING: u64 = 0x05;
const STREAM_EVAL: u64 = 0x06;
const STREAM_KITS: u64 = 0x07;
const STREAM_DIAG: u64 = 0x09;

/// A deterministic mapping from observations to actions, used by
/// evaluation rollouts.
pub trait Policy {
    fn act(&mut self, agent: usize, obs: &[f64]) -> Action;
}

/// Noise-free greedy policy of a trained ensemble.
pub struct EnsemblePolicy<'a> {
    pub ensemble: &'a AgentEnsemble,
}

impl Policy for EnsemblePolicy<'_> {
    fn act(&mut self, agent: usize, obs: &[f64]) -> Action {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode draws nothing
        select_action(
            &self.ensemble.actors[agent],
            obs,
            &self.ensemble.action_space,
            ActionMode::Eval,
            &Exploration::default(),
            &mut rng,
        )
        .exec
    }
}

/// Uniform random policy baseline.
pub struct RandomPolicy {
    pub space: ActionSpace,
    pub rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(space: ActionSpace, seed: u64) -> Self {
        RandomPolicy {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _agent: usize, _obs: &[f64]) -> Action {
        match self.space {
            ActionSpace::Discrete(k) => Action::Discrete(self.rng.random_range(0..k)),
            ActionSpace::Continuous { dim, low, high } => Action::Continuous(
                (0..dim).map(|_| self.rng.random_range(low..high)).collect(),
            ),
        }
    }
}

/// Aggregate results of deterministic evaluation rollouts.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub episodes: usize,
    pub team_return: f64,
    pub agent_returns: Vec<f64>,
    pub success_rate: f64,
    pub avg_distance: f64,
    pub collisions: f64,
}

/// Options for [`evaluate_policy`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Cap on steps per episode; defaults to the environment's own limit.
    pub max_steps: Option<usize>,
}

/// Runs noise-free episodes and aggregates returns, success, and particle
/// diagnostics. Optionally dumps each step as a JSON line.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    opts: &EvalOptions,
    mut trajectory_out: Option<&mut dyn Write>,
) -> Result<EvalSummary> {
    let n = env.spec().n_agents;
    let win_reward = 1000.0;
    let max_steps = opts.max_steps.unwrap_or(env.spec().max_steps);
    let mut agent_returns = vec![0.0; n];
    let mut successes = 0usize;
    let mut dist_acc = 0.0;
    let mut dist_steps = 0usize;
    let mut collisions_acc = 0usize;
    let mut has_diagnostics = false;

    for episode in 0..opts.episodes {
        let mut obs = env.reset(derive_seed(opts.seed, STREAM_EVAL, episode));
        let mut won = false;
        for step in 0..max_steps {
            let actions: Vec<Action> = (0..n).map(|i| policy.act(i, &obs[i])).collect();
            let result = env.step(&actions)?;
            for (acc, r) in agent_returns.iter_mut().zip(&result.rewards) {
                *acc += r;
            }
            if result.rewards.iter().any(|&r| r >= win_reward) {
                won = true;
            }
            if let Some((dist, pairs)) = env.landmark_diagnostics() {
                has_diagnostics = true;
                dist_acc += dist;
                dist_steps += 1;
                collisions_acc += pairs;
            }
            if let Some(out) = trajectory_out.as_deref_mut() {
                let line = serde_json::json!({
                    "episode": episode,
                    "step": step,
                    "obs": result.obs,
                    "rewards": result.rewards,
                    "done": result.done,
                });
                writeln!(out, "{line}")?;
            }
            if result.done {
                break;
            }
            obs = result.obs;
        }
        if won {
            successes += 1;
        }
    }

    let eps = opts.episodes as f64;
    let agent_means: Vec<f64> = agent_returns.iter().map(|r| r / eps).collect();
    Ok(EvalSummary {
        episodes: opts.episodes,
        team_return: agent_means.iter().sum::<f64>() / n as f64,
        agent_returns: agent_means,
        success_rate: successes as f64 / eps,
        avg_distance: if has_diagnostics && dist_steps > 0 {
            dist_acc / dist_steps as f64
        } else {
            0.0
        },
        collisions: if has_diagnostics {
            collisions_acc as f64 / eps
        } else {
            0.0
        },
    })
}

/// Estimators and autoencoder serving one influencer.
pub struct InfluencerKit {
    pub agent: usize,
    pub central: CentralEstimator,
    pub clones: CloneSet,
    pub autoencoder: NoveltyAutoencoder,
}

/// One training run.
pub struct Trainer {
    pub config: RunConfig,
    pub ensemble: AgentEnsemble,
    env: Box<dyn Environment>,
    kits: Vec<InfluencerKit>,
    buffer: ReplayBuffer,
    rng_actions: ChaCha8Rng,
    rng_sampling: ChaCha8Rng,
    env_steps: u64,
    episodes_done: usize,
    f_policy_evaluations: u64,
    train_wins: u64,
    psi_sum: f64,
    psi_max: f64,
    psi_count: u64,
    last_critic_losses: Vec<f64>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = make_env(config.env);
        let spec = env.spec().clone();
        let mut rng_init = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT, 0));
        let influencer = rng_init.random_range(0..spec.n_agents);
        let ensemble = AgentEnsemble::new(
            &spec,
            &config.hidden,
            config.layer_norm,
            config.actor_lr,
            config.critic_lr,
            config.gamma,
            influencer,
            derive_seed(config.seed, STREAM_NETS, 0),
        )?;
        let kit_agents: Vec<usize> = match config.ablation {
            AblationMode::Symmetric => (0..spec.n_agents).collect(),
            _ => vec![influencer],
        };
        let mut kits = Vec::with_capacity(kit_agents.len());
        for &agent in &kit_agents {
            let mut scoped = ensemble.clone();
            scoped.influencer = agent;
            let central = CentralEstimator::new(
                &scoped,
                &config.hidden,
                config.layer_norm,
                config.estimator_lr,
                derive_seed(config.seed, STREAM_KITS, agent * 2),
            )?;
            let clones = CloneSet::new(&scoped, config.estimator_lr)?;
            let autoencoder = NoveltyAutoencoder::new(
                spec.obs_dims[agent] + spec.action_space.vector_dim(),
                &config.autoencoder_hidden,
                config.autoencoder_lr,
                derive_seed(config.seed, STREAM_KITS, agent * 2 + 1),
            )?;
            kits.push(InfluencerKit {
                agent,
                central,
                clones,
                autoencoder,
            });
        }
        let shape = TransitionShape {
            obs_dims: spec.obs_dims.clone(),
            action_dims: vec![spec.action_space.vector_dim(); spec.n_agents],
            discrete: spec.action_space.is_discrete(),
        };
        let buffer = ReplayBuffer::new(shape, config.buffer_capacity);
        let n = spec.n_agents;
        Ok(Trainer {
            rng_actions: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_ACTIONS, 0)),
            rng_sampling: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SAMPLING, 0)),
            config,
            ensemble,
            env,
            kits,
            buffer,
            env_steps: 0,
            episodes_done: 0,
            f_policy_evaluations: 0,
            train_wins: 0,
            psi_sum: 0.0,
            psi_max: 0.0,
            psi_count: 0,
            last_critic_losses: vec![0.0; n],
            started: Instant::now(),
        })
    }

    /// Times the influence value fed a policy update (stays zero in `no_f`).
    pub fn f_policy_evaluations(&self) -> u64 {
        self.f_policy_evaluations
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Episodes in which training behavior earned the sparse win reward.
    pub fn train_wins(&self) -> u64 {
        self.train_wins
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub(crate) fn kits(&self) -> &[InfluencerKit] {
        &self.kits
    }

    /// Samples a batch for measurement without touching the training
    /// sampling stream.
    pub(crate) fn diagnostic_batch(&self, size: usize, seed: u64) -> Result<crate::replay::Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.buffer.sample_uniform(size.min(self.buffer.len().max(1)), &mut rng)
    }

    /// Collects transitions with the current behavior policies, without
    /// counting episodes or triggering learning. Resets draw from a
    /// dedicated seed stream so training episodes are unaffected.
    pub fn prefill(&mut self, transitions: usize) -> Result<()> {
        let n = self.ensemble.n_agents;
        let mut collected = 0usize;
        let mut block = 0usize;
        while collected < transitions {
            let mut obs = self.env.reset(derive_seed(
                self.config.seed,
                STREAM_ENV,
                (1 << 32) + block,
            ));
            block += 1;
            for _ in 0..self.config.episode_len {
                let warm = self.buffer.len() >= self.config.warmup_transitions;
                let selected: Vec<crate::maddpg::SelectedAction> = (0..n)
                    .map(|i| {
                        if warm {
                            select_action(
                                &self.ensemble.actors[i],
                                &obs[i],
                                &self.ensemble.action_space,
                                ActionMode::Train,
                                &Exploration {
                                    temperature: self.config.temperature,
                                    noise_sigma: self.config.noise_sigma,
                                },
                                &mut self.rng_actions,
                            )
                        } else {
                            random_action(&self.ensemble.action_space, &mut self.rng_actions)
                        }
                    })
                    .collect();
                let exec: Vec<Action> = selected.iter().map(|s| s.exec.clone()).collect();
                let result = self.env.step(&exec)?;
                let mut shaped = self.shape_step_rewards(&obs, &selected, &result.rewards, false)?;
                for r in &mut shaped {
                    *r *= self.config.reward_scale;
                }
                self.buffer.push(Transition {
                    obs: obs.clone(),
                    actions: selected.iter().map(|s| s.vector.clone()).collect(),
                    rewards: shaped,
                    next_obs: result.obs.clone(),
                    done: result.done,
                })?;
                collected += 1;
                if result.done || collected >= transitions {
                    break;
                }
                obs = result.obs;
            }
        }
        Ok(())
    }

    /// Applies the ablation-gated reward shaping for one collected step.
    fn shape_step_rewards(
        &mut self,
        obs: &[Vec<f64>],
        selected: &[crate::maddpg::SelectedAction],
        extrinsic: &[f64],
        track_stats: bool,
    ) -> Result<Vec<f64>> {
        if !self.shaping_active() {
            return Ok(extrinsic.to_vec());
        }
        let n = self.ensemble.n_agents;
        let mut novelty = vec![0.0; n];
        let mut gaps = vec![0.0; n];
        for kit in &self.kits {
            novelty[kit.agent] =
                novelty_score(&kit.autoencoder, &obs[kit.agent], &selected[kit.agent].vector);
        }
        for agent in 0..n {
            let policy_out = policy_vector_single(&self.ensemble, agent, &obs[agent]);
            gaps[agent] = policy_out
                .iter()
                .zip(&selected[agent].vector)
                .map(|(p, a)| (p - a) * (p - a))
                .sum();
        }
        if track_stats {
            for kit in &self.kits {
                let v = novelty[kit.agent];
                self.psi_sum += v;
                self.psi_max = self.psi_max.max(v);
                self.psi_count += 1;
            }
        }
        compose_rewards(
            &ShapingInputs {
                extrinsic,
                influencer: self.ensemble.influencer,
                novelty: &novelty,
                action_gap_sq: &gaps,
            },
            &IntrinsicConfig {
                lambda_pi: self.config.lambda_pi,
                omega: self.config.omega,
            },
            self.config.ablation,
        )
    }

    fn shaping_active(&self) -> bool {
        !matches!(self.config.ablation, AblationMode::NoIm)
            && (self.config.lambda_pi > 0.0 || self.config.omega > 0.0)
    }

    /// Whether the influence value feeds any policy update.
    fn f_in_policy_path(&self) -> bool {
        self.config.beta > 0.0
            && !matches!(self.config.ablation, AblationMode::NoF)
    }

    fn estimators_active(&self) -> bool {
        self.f_in_policy_path() || self.config.train_unused_estimator
    }

    fn kit_index_for(&self, agent: usize) -> Option<usize> {
        self.kits.iter().position(|k| k.agent == agent)
    }

    /// Runs the full schedule, streaming metrics rows to `out`. Returns the
    /// rows for programmatic use.
    pub fn run<W: Write>(&mut self, out: W) -> Result<Vec<MetricsRow>> {
        let n = self.ensemble.n_agents;
        let mut writer = MetricsWriter::new(out, &self.config, n)?;
        let mut rows = Vec::new();
        for episode in 0..self.config.episodes {
            self.train_episode(episode)?;
            if (episode + 1) % self.config.eval_cadence == 0 {
                let row = self.evaluation_row(episode + 1)?;
                writer.write_row(&row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// One episode of collection with interleaved learning updates.
    pub fn train_episode(&mut self, episode: usize) -> Result<()> {
        for kit in &mut self.kits {
            let mut scoped_influencer = kit.agent;
            std::mem::swap(&mut self.ensemble.influencer, &mut scoped_influencer);
            kit.clones.sync(&self.ensemble);
            std::mem::swap(&mut self.ensemble.influencer, &mut scoped_influencer);
        }
        let mut obs = self
            .env
            .reset(derive_seed(self.config.seed, STREAM_ENV, episode));
        let n = self.ensemble.n_agents;
        let mut pins: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; self.kits.len()];

        for _step in 0..self.config.episode_len {
            let warm = self.buffer.len() >= self.config.warmup_transitions.min(self.config.buffer_capacity);
            let selected: Vec<crate::maddpg::SelectedAction> = (0..n)
                .map(|i| {
                    if warm {
                        select_action(
                            &self.ensemble.actors[i],
                            &obs[i],
                            &self.ensemble.action_space,
                            ActionMode::Train,
                            &Exploration {
                                temperature: self.config.temperature,
                                noise_sigma: self.config.noise_sigma,
                            },
                            &mut self.rng_actions,
                        )
                    } else {
                        random_action(&self.ensemble.action_space, &mut self.rng_actions)
                    }
                })
                .collect();
            let exec: Vec<Action> = selected.iter().map(|s| s.exec.clone()).collect();
            let result = self.env.step(&exec)?;
            if result.rewards.iter().any(|&r| r >= 1000.0) {
                self.train_wins += 1;
            }
            let mut shaped = self.shape_step_rewards(&obs, &selected, &result.rewards, true)?;
            for r in &mut shaped {
                *r *= self.config.reward_scale;
            }

            self.buffer.push(Transition {
                obs: obs.clone(),
                actions: selected.iter().map(|s| s.vector.clone()).collect(),
                rewards: shaped,
                next_obs: result.obs.clone(),
                done: result.done,
            })?;
            for (slot, kit) in self.kits.iter().enumerate() {
                pins[slot] = Some((obs[kit.agent].clone(), selected[kit.agent].vector.clone()));
            }

            self.env_steps += 1;
            if self.env_steps % self.config.transitions_per_update as u64 == 0
                && self.buffer.len() >= self.config.warmup_transitions
            {
                self.learning_update(&pins)?;
            }

            if result.done {
                break;
            }
            obs = result.obs;
        }
        self.episodes_done += 1;
        Ok(())
    }

    fn learning_update(&mut self, pins: &[Option<(Vec<f64>, Vec<f64>)>]) -> Result<()> {
        let batch = self
            .buffer
            .sample_uniform(self.config.batch_size, &mut self.rng_sampling)?;
        let n = self.ensemble.n_agents;

        // Estimator and clone steps on the counterfactually pinned view.
        if self.estimators_active() {
            for (slot, kit) in self.kits.iter_mut().enumerate() {
                let Some((pin_obs, pin_act)) = pins[slot].as_ref() else {
                    continue;
                };
                let mut scoped = kit.agent;
                std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
                let d_batch =
                    crate::replay::counterfactual_view(&batch, pin_obs, pin_act, kit.agent)?;
                let train_single = self.config.estimator == EstimatorKind::Single
                    || self.config.train_unused_estimator;
                let train_multi = self.config.estimator == EstimatorKind::Multi
                    || self.config.train_unused_estimator;
                for _ in 0..self.config.estimator_updates {
                    if train_single {
                        train_central_estimator(
                            &mut kit.central,
                            &d_batch,
                            &self.ensemble,
                            self.config.grad_clip,
                        )?;
                    }
                    if train_multi {
                        train_clones(
                            &mut kit.clones,
                            &d_batch,
                            &self.ensemble,
                            self.config.grad_clip,
                        )?;
                    }
                }
                std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
            }
        }

        // Critic regression for every agent against shared targets.
        let targets = self.ensemble.td_targets(&batch);
        for i in 0..n {
            let (loss, grads) = critic_loss_with_targets(&self.ensemble, &batch, i, &targets);
            let bundle = clip_gradients(grads, self.config.grad_clip);
            let mut opt = self.ensemble.critic_opts[i].clone();
            opt.apply(&mut self.ensemble.critics[i], &bundle);
            self.ensemble.critic_opts[i] = opt;
            self.last_critic_losses[i] = loss;
        }

        // Actor updates: influencers carry the combined loss, everyone else
        // ascends the plain objective.
        for i in 0..n {
            let use_f = self.f_in_policy_path() && self.kit_index_for(i).is_some()
                && (matches!(self.config.ablation, AblationMode::Symmetric)
                    || i == self.ensemble.influencer);
            let bundle = if use_f {
                let slot = self.kit_index_for(i).expect("kit exists");
                let mut scoped = i;
                std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
                let regularizer = match self.config.estimator {
                    EstimatorKind::Single => Regularizer::Single(&self.kits[slot].central),
                    EstimatorKind::Multi => Regularizer::Multi(&self.kits[slot].clones),
                };
                let (_, grads) =
                    influencer_policy_loss(&self.ensemble, &regularizer, &batch, self.config.beta);
                std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
                self.f_policy_evaluations += 1;
                grads
            } else {
                let (_, mut grads) = policy_objective(&self.ensemble, &batch, i);
                for w in &mut grads.weights {
                    w.mapv_inplace(|v| -v);
                }
                for b in &mut grads.biases {
                    b.mapv_inplace(|v| -v);
                }
                grads
            };
            let bundle = clip_gradients(bundle, self.config.grad_clip);
            let mut opt = self.ensemble.actor_opts[i].clone();
            opt.apply(&mut self.ensemble.actors[i], &bundle);
            self.ensemble.actor_opts[i] = opt;
        }

        // Autoencoder reconstruction step on fresh influencer pairs.
        if self.shaping_active() {
            for kit in &mut self.kits {
                let ae_batch = self
                    .buffer
                    .sample_uniform(self.config.batch_size, &mut self.rng_sampling)?;
                let rows = ae_batch.len();
                let obs_dim = ae_batch.obs[kit.agent].ncols();
                let act_dim = ae_batch.actions[kit.agent].ncols();
                let mut inputs = Array2::zeros((rows, obs_dim + act_dim));
                inputs
                    .slice_mut(ndarray::s![.., ..obs_dim])
                    .assign(&ae_batch.obs[kit.agent]);
                inputs
                    .slice_mut(ndarray::s![.., obs_dim..])
                    .assign(&ae_batch.actions[kit.agent]);
                train_autoencoder(&mut kit.autoencoder, &inputs, self.config.grad_clip);
            }
        }

        self.ensemble.update_targets(self.config.tau);
        Ok(())
    }

    /// Influence value of the selected estimator on a diagnostic batch.
    fn diagnostic_f(&mut self, eval_index: usize) -> Result<f64> {
        if !self.estimators_active() || self.buffer.is_empty() {
            return Ok(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            STREAM_DIAG,
            eval_index,
        ));
        let batch = self
            .buffer
            .sample_uniform(self.config.batch_size.min(self.buffer.len()), &mut rng)?;
        let mut total = 0.0;
        for kit in &self.kits {
            let mut scoped = kit.agent;
            std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
            let report = match self.config.estimator {
                EstimatorKind::Single => {
                    influence_single(&kit.central, &batch, &self.ensemble, self.env_steps)
                }
                EstimatorKind::Multi => {
                    influence_multi(&kit.clones, &batch, &self.ensemble, self.env_steps)
                }
            };
            std::mem::swap(&mut self.ensemble.influencer, &mut scoped);
            total += report.value;
        }
        Ok(total / self.kits.len() as f64)
    }

    fn evaluation_row(&mut self, episode: usize) -> Result<MetricsRow> {
        let eval_index = episode / self.config.eval_cadence;
        let mut policy = EnsemblePolicy {
            ensemble: &self.ensemble,
        };
        let mut env = make_env(self.config.env);
        let summary = evaluate_policy(
            &mut policy,
            env.as_mut(),
            &EvalOptions {
                episodes: self.config.eval_episodes,
                seed: derive_seed(self.config.seed, STREAM_EVAL, eval_index),
                max_steps: None,
            },
            None,
        )?;
        let f_value = self.diagnostic_f(eval_index)?;
        let psi_mean = if self.psi_count > 0 {
            self.psi_sum / self.psi_count as f64
        } else {
            0.0
        };
        let psi_max = self.psi_max;
        self.psi_sum = 0.0;
        self.psi_max = 0.0;
        self.psi_count = 0;
        Ok(MetricsRow {
            episode,
            team_return: summary.team_return,
            agent_returns: summary.agent_returns,
            success_rate: summary.success_rate,
            avg_distance: summary.avg_distance,
            collisions: summary.collisions,
            f_value,
            psi_mean,
            psi_max,
            critic_losses: self.last_critic_losses.clone(),
            wallclock_secs: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Snapshot for checkpointing.
    pub fn checkpoint(&self) -> EnsembleCheckpoint {
        EnsembleCheckpoint::from_ensemble(&self.ensemble, &self.config, self.episodes_done)
    }
}

fn random_action(space: &ActionSpace, rng: &mut ChaCha8Rng) -> crate::maddpg::SelectedAction {
    match space {
        ActionSpace::Discrete(k) => {
            let idx = rng.random_range(0..*k);
            let mut vector = vec![0.0; *k];
            vector[idx] = 1.0;
            crate::maddpg::SelectedAction {
                exec: Action::Discrete(idx),
                vector,
            }
        }
        ActionSpace::Continuous { dim, low, high } => {
            let vector: Vec<f64> = (0..*dim).map(|_| rng.random_range(*low..*high)).collect();
            crate::maddpg::SelectedAction {
                exec: Action::Continuous(vector.clone()),
                vector,
            }
        }
    }
}

fn policy_vector_single(ensemble: &AgentEnsemble, agent: usize, obs: &[f64]) -> Vec<f64> {
    let row = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row shape");
    ensemble.policy_vectors(agent, &row).row(0).to_vec()
}

/// Outcome of a full [`train`] call.
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub f_policy_evaluations: u64,
    pub train_wins: u64,
}

/// Trains per the config, writing `metrics.csv` and `checkpoint.json` into
/// `out_dir`.
pub fn train(config: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(config.clone())?;
    let metrics_path = out_dir.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path)?;
    let rows = trainer.run(std::io::BufWriter::new(file))?;
    let checkpoint_path = out_dir.join("checkpoint.json");
    save_ensemble(&checkpoint_path, &trainer.checkpoint())?;
    Ok(TrainOutcome {
        rows,
        metrics_path,
        checkpoint_path,
        f_policy_evaluations: trainer.f_policy_evaluations(),
        train_wins: trainer.train_wins(),
    })
}

/// Evaluates a checkpoint with deterministic rollouts.
pub fn evaluate(checkpoint_path: &Path, episodes: usize, seed: u64) -> Result<MetricsRow> {
    let ckpt = crate::checkpoint::load_ensemble(checkpoint_path)?;
    let (ensemble, config, trained) = ckpt.into_ensemble()?;
    let mut env = make_env(config.env);
    let mut policy = EnsemblePolicy {
        ensemble: &ensemble,
    };
    let summary = evaluate_policy(
        &mut policy,
        env.as_mut(),
        &EvalOptions {
            episodes,
            seed,
            max_steps: None,
        },
        None,
    )?;
    Ok(MetricsRow {
        episode: trained,
        team_return: summary.team_return,
        agent_returns: summary.agent_returns,
        success_rate: summary.success_rate,
        avg_distance: summary.avg_distance,
        collisions: summary.collisions,
        f_value: 0.0,
        psi_mean: 0.0,
        psi_max: 0.0,
        critic_losses: vec![0.0; ensemble.n_agents],
        wallclock_secs: 0.0,
    })
}

/// One run's end-of-training comparison entry.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub seed: u64,
    /// Mean team return over the final evaluation window.
    pub final_team_return: f64,
    pub final_success_rate: f64,
}

/// Mean of the last `window_episodes` worth of evaluation rows.
pub fn final_window_mean(rows: &[MetricsRow], eval_episodes: usize, window_episodes: usize) -> (f64, f64) {
    let points = (window_episodes / eval_episodes.max(1)).max(1);
    let tail = rows.iter().rev().take(points).collect::<Vec<_>>();
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let ret = tail.iter().map(|r| r.team_return).sum::<f64>() / tail.len() as f64;
    let succ = tail.iter().map(|r| r.success_rate).sum::<f64>() / tail.len() as f64;
    (ret, succ)
}

/// Runs `{full, no_f, no_im, symmetric} x seeds` with paired environment
/// seeds and writes one aligned comparison CSV plus per-run metrics files.
pub fn run_ablation_suite(
    base: &RunConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    run_modes_suite(
        base,
        seeds,
        out_dir,
        &[
            AblationMode::Full,
            AblationMode::NoF,
            AblationMode::NoIm,
            AblationMode::Symmetric,
        ],
    )
}

/// Ablation sweep over an explicit mode list; two runs execute in parallel.
pub fn run_modes_suite(
    base: &RunConfig,
    seeds: &[u64],
    out_dir: &Path,
    modes: &[AblationMode],
) -> Result<Vec<AblationRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut jobs = Vec::new();
    for &seed in seeds {
        for &mode in modes {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.ablation = mode;
            jobs.push(cfg);
        }
    }
    let results = run_parallel(&jobs, out_dir)?;
    let mut rows = Vec::new();
    for (cfg, run_rows) in jobs.iter().zip(&results) {
        let (final_team_return, final_success_rate) =
            final_window_mean(run_rows, cfg.eval_episodes, 200);
        rows.push(AblationRow {
            mode: cfg.ablation,
            seed: cfg.seed,
            final_team_return,
            final_success_rate,
        });
    }
    let mut csv = crate::metrics::provenance_header(base);
    csv.push_str("mode,seed,final_team_return,final_success_rate\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.mode, row.seed, row.final_team_return, row.final_success_rate
        ));
    }
    std::fs::write(out_dir.join("ablation.csv"), csv)?;
    Ok(rows)
}

/// Executes independent training jobs on two worker threads; results come
/// back in job order regardless of scheduling.
pub fn run_parallel(jobs: &[RunConfig], out_dir: &Path) -> Result<Vec<Vec<MetricsRow>>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<MetricsRow>>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = 2.min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let cfg = &jobs[idx];
                let dir = out_dir.join(format!("{}_{}_seed{}", cfg.env, cfg.ablation, cfg.seed));
                let outcome = train(cfg, &dir).map(|o| o.rows);
                results.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.unwrap_or_else(|| Err(Error::Contract("job never ran".into()))))
        .collect()
}

/// One-sided sign-test p-value: probability of at least `wins` successes in
/// `trials` fair coin flips. Ties must be excluded by the caller.
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=trials {
        p += binomial(trials, k);
    }
    p / 2f64.powi(trials as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}
