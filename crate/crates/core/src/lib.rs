//! Influence-regularized multi-agent actor-critic with intrinsic diversity
//! rewards, together with the sparse-reward benchmark environments and the
//! experiment harness used to evaluate it.
//!
//! The crate is organized around the training stack:
//!
//! - [`tensor`]: dense networks, reverse-mode gradients, optimizers.
//! - [`replay`]: experience buffer, uniform sampling, counterfactual views.
//! - [`envs`]: Sparse Push-Box, Sparse Secret Room, Cooperative Navigation.
//! - [`maddpg`]: centralized-critic, decentralized-actor learning.
//! - [`influence`]: counterfactual influence estimators and their oracle.
//! - [`intrinsic`]: autoencoder novelty bonus and influencee penalty.
//! - [`coverage`]: joint-action coverage times under uncoordinated exploration.
//! - [`harness`]: training loop, ablations, evaluation, metrics, CLI entry points.

pub mod checkpoint;
pub mod config;
pub mod coverage;
pub mod envs;
pub mod harness;
pub mod influence;
pub mod intrinsic;
pub mod maddpg;
pub mod metrics;
pub mod replay;
pub mod tensor;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("insufficient data: need {need}, have {have}")]
    InsufficientData { need: usize, have: usize },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
