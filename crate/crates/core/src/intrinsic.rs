//! Novelty machinery: the influencer's autoencoder bonus and the
//! influencees' exp-gated penalty, composed into shaped rewards at
//! buffer-insertion time.
//!
//! The autoencoder reconstructs concatenated influencer observation-action
//! pairs; its squared reconstruction error is the novelty score. A score of
//! zero marks perfectly familiar behavior, so the penalty gate
//! `exp(-omega * novelty)` is fully closed (maximal penalty) on familiar
//! configurations and vanishes on novel ones.

use ndarray::Array2;

use crate::config::AblationMode;
use crate::tensor::tape::{clip_gradients, GradBundle, ParamMode, Tape};
use crate::tensor::{init_kaiming, Net, OptimState};
use crate::{Error, Result};

/// Autoencoder over concatenated `(obs, action)` influencer pairs.
#[derive(Debug, Clone)]
pub struct NoveltyAutoencoder {
    pub net: Net,
    pub opt: OptimState,
}

impl NoveltyAutoencoder {
    /// Kaiming-initialized reconstruction net with the given hidden layout;
    /// input and output dims both equal `input_dim`.
    pub fn new(input_dim: usize, hidden: &[usize], lr: f64, seed: u64) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(input_dim);
        let net = init_kaiming(&dims, seed)?;
        let opt = OptimState::adam(lr, &net)?;
        Ok(NoveltyAutoencoder { net, opt })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
}

/// Reconstruction loss `mean ||phi(x) - x||^2` on a batch (rows), with
/// gradients for the autoencoder parameters.
pub fn autoencoder_loss(ae: &NoveltyAutoencoder, inputs: &Array2<f64>) -> (f64, GradBundle) {
    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let taped = ae.net.forward_on_tape(&mut tape, x, ParamMode::Trainable);
    let diff = tape.sub(taped.output, x);
    let loss = tape.mean_sq_row_norm(diff);
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss);
    (value, GradBundle::from_taped(&taped, &mut grads, &ae.net))
}

/// One reconstruction gradient step on a batch of influencer pairs (rows).
/// Returns the pre-step loss.
pub fn train_autoencoder(
    ae: &mut NoveltyAutoencoder,
    inputs: &Array2<f64>,
    clip: f64,
) -> f64 {
    let (value, grads) = autoencoder_loss(ae, inputs);
    let bundle = clip_gradients(grads, clip);
    ae.opt.apply(&mut ae.net, &bundle);
    value
}

/// Novelty of one observation-action pair: squared reconstruction error of
/// their concatenation.
pub fn novelty_score(ae: &NoveltyAutoencoder, obs: &[f64], action: &[f64]) -> f64 {
    let mut x = Vec::with_capacity(obs.len() + action.len());
    x.extend_from_slice(obs);
    x.extend_from_slice(action);
    debug_assert_eq!(x.len(), ae.input_dim());
    let out = ae.net.forward(&x);
    out.iter()
        .zip(&x)
        .map(|(o, i)| (o - i) * (o - i))
        .sum()
}

/// The influencer's shaped reward: extrinsic plus the weighted novelty bonus.
/// A zero coefficient is an exact no-op whatever the novelty.
pub fn influencer_reward(r_ext: f64, novelty: f64, lambda_pi: f64) -> f64 {
    if lambda_pi == 0.0 {
        return r_ext;
    }
    r_ext + lambda_pi * novelty
}

/// The influencee's intrinsic penalty:
/// `-exp(-omega * novelty) * ||policy_output - executed_action||^2`.
///
/// Always non-positive; exactly zero when the executed action equals the
/// current policy output, and vanishing as novelty grows.
pub fn influencee_penalty(
    novelty: f64,
    policy_output: &[f64],
    executed_action: &[f64],
    omega: f64,
) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::Config(format!("omega must be non-negative, got {omega}")));
    }
    debug_assert_eq!(policy_output.len(), executed_action.len());
    let dist_sq: f64 = policy_output
        .iter()
        .zip(executed_action)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(gated_penalty(novelty, dist_sq, omega))
}

/// Penalty from a precomputed squared action distance. A zero coefficient
/// switches the term off entirely, matching the bonus convention, so
/// `lambda_pi = omega = 0` makes reward shaping an exact no-op.
fn gated_penalty(novelty: f64, dist_sq: f64, omega: f64) -> f64 {
    if dist_sq == 0.0 || omega == 0.0 {
        return 0.0;
    }
    -(-omega * novelty).exp() * dist_sq
}

/// Per-step inputs to reward composition.
///
/// `novelty[k]` is agent `k`'s novelty under its own autoencoder (only the
/// influencer's entry is consulted outside symmetric mode), and
/// `action_gap_sq[k]` is the squared distance between agent `k`'s current
/// policy output and the action vector it executed.
#[derive(Debug, Clone)]
pub struct ShapingInputs<'a> {
    pub extrinsic: &'a [f64],
    pub influencer: usize,
    pub novelty: &'a [f64],
    pub action_gap_sq: &'a [f64],
}

/// Shaping coefficients.
#[derive(Debug, Clone, Copy)]
pub struct IntrinsicConfig {
    pub lambda_pi: f64,
    pub omega: f64,
}

/// Composes shaped per-agent rewards for one transition.
///
/// The influencer receives the novelty bonus and each influencee the gated
/// penalty; `NoIm` passes extrinsic rewards through untouched; `Symmetric`
/// gives every agent both roles, averaging the penalty gates over the other
/// agents' novelty scores.
pub fn compose_rewards(
    inputs: &ShapingInputs<'_>,
    config: &IntrinsicConfig,
    mode: AblationMode,
) -> Result<Vec<f64>> {
    let n = inputs.extrinsic.len();
    if inputs.novelty.len() != n || inputs.action_gap_sq.len() != n {
        return Err(Error::Shape(
            "per-agent shaping inputs must all have the agent count length".into(),
        ));
    }
    if config.omega < 0.0 || config.lambda_pi < 0.0 {
        return Err(Error::Config("shaping coefficients must be non-negative".into()));
    }
    let mut shaped = Vec::with_capacity(n);
    for k in 0..n {
        let r = inputs.extrinsic[k];
        let value = match mode {
            AblationMode::NoIm => r,
            AblationMode::Full | AblationMode::NoF => {
                if k == inputs.influencer {
                    influencer_reward(r, inputs.novelty[inputs.influencer], config.lambda_pi)
                } else {
                    r + gated_penalty(
                        inputs.novelty[inputs.influencer],
                        inputs.action_gap_sq[k],
                        config.omega,
                    )
                }
            }
            AblationMode::Symmetric => {
                let bonus = influencer_reward(0.0, inputs.novelty[k], config.lambda_pi);
                let mut penalty = 0.0;
                for j in 0..n {
                    if j != k {
                        penalty +=
                            gated_penalty(inputs.novelty[j], inputs.action_gap_sq[k], config.omega);
                    }
                }
                r + bonus + penalty / (n - 1) as f64
            }
        };
        shaped.push(value);
    }
    Ok(shaped)
}
