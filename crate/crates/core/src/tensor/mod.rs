//! Minimal dense-network math.
//!
//! Everything here is 64-bit and deterministic: the same seed and inputs
//! produce bit-identical weights, outputs, gradients, and updates. Networks
//! are plain value types (`Clone`) so target copies and parameter snapshots
//! are cheap to reason about.

mod optim;
pub mod tape;

pub use optim::{soft_update, OptimKind, OptimState};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Epsilon inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Activation applied to the last layer's pre-activations.
///
/// `SoftmaxLogits` marks a network whose raw outputs are logits meant for a
/// softmax downstream (discrete policies); `forward` leaves them untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
    SoftmaxLogits,
}

/// A feedforward network: affine layers, optional layer norm on hidden
/// pre-activations, ReLU hidden activations, configurable output activation.
///
/// Weight matrices have shape `(in_dim, out_dim)`; a batch forward is
/// `x.dot(w) + b` row by row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Net {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    layer_norm: Vec<bool>,
    output_activation: OutputActivation,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Glorot-uniform initialization: weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_glorot(layer_dims: &[usize], rng_seed: u64) -> Result<Net> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("valid uniform bounds");
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            dist.sample(&mut rng)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(Net {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        layer_norm: vec![false; layer_dims.len().saturating_sub(2)],
        output_activation: OutputActivation::Linear,
    })
}

/// Kaiming-normal initialization: weights normal with std `sqrt(2 / fan_in)`,
/// biases zero.
pub fn init_kaiming(layer_dims: &[usize], rng_seed: u64) -> Result<Net> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid normal params");
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            dist.sample(&mut rng)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(Net {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        layer_norm: vec![false; layer_dims.len().saturating_sub(2)],
        output_activation: OutputActivation::Linear,
    })
}

/// Normalizes each row to zero mean and unit variance (population variance),
/// with [`LAYER_NORM_EPS`] inside the square root.
pub fn layer_norm_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Net {
    /// Enables or disables layer norm on every hidden layer.
    pub fn with_layer_norm(mut self, enabled: bool) -> Self {
        for flag in &mut self.layer_norm {
            *flag = enabled;
        }
        self
    }

    pub fn with_output_activation(mut self, act: OutputActivation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_norm_flags(&self) -> &[bool] {
        &self.layer_norm
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Copies all parameters from `other`; shapes must match.
    pub fn copy_params_from(&mut self, other: &Net) {
        debug_assert_eq!(self.layer_dims, other.layer_dims);
        for (dst, src) in self.weights.iter_mut().zip(&other.weights) {
            dst.assign(src);
        }
        for (dst, src) in self.biases.iter_mut().zip(&other.biases) {
            dst.assign(src);
        }
    }

    /// Maximum absolute difference over all parameters of two shape-identical nets.
    pub fn max_param_abs_diff(&self, other: &Net) -> f64 {
        let mut max = 0.0f64;
        for (a, b) in self.weights.iter().zip(&other.weights) {
            for (x, y) in a.iter().zip(b.iter()) {
                max = max.max((x - y).abs());
            }
        }
        for (a, b) in self.biases.iter().zip(&other.biases) {
            for (x, y) in a.iter().zip(b.iter()) {
                max = max.max((x - y).abs());
            }
        }
        max
    }

    /// Batch forward pass; rows are samples.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            input.ncols(),
            self.layer_dims[0],
            "input dim {} does not match net input dim {}",
            input.ncols(),
            self.layer_dims[0]
        );
        let last = self.weights.len() - 1;
        let mut x = input.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = x.dot(w);
            z += &b.view().insert_axis(Axis(0));
            if i < last {
                if self.layer_norm[i] {
                    layer_norm_rows(&mut z);
                }
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                match self.output_activation {
                    OutputActivation::Linear | OutputActivation::SoftmaxLogits => {}
                    OutputActivation::Tanh => z.mapv_inplace(f64::tanh),
                }
            }
            x = z;
        }
        x
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        self.forward_batch(&x).row(0).to_vec()
    }
}
