//! Optimizers and target-network tracking.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::Net;
use crate::tensor::tape::GradBundle;
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_ALPHA: f64 = 0.99;
const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Adam,
    RmsProp,
}

/// Per-network optimizer state; moment accumulators mirror parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimKind,
    pub step_size: f64,
    step: u64,
    m_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_weights: Vec<Array2<f64>>,
    v_biases: Vec<Array1<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimKind, step_size: f64, net: &Net) -> Result<Self> {
        if step_size <= 0.0 {
            return Err(Error::Config(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        let zeros_w = |net: &Net| -> Vec<Array2<f64>> {
            (0..net.num_layers())
                .map(|l| Array2::zeros(net.weight(l).raw_dim()))
                .collect()
        };
        let zeros_b = |net: &Net| -> Vec<Array1<f64>> {
            (0..net.num_layers())
                .map(|l| Array1::zeros(net.bias(l).len()))
                .collect()
        };
        Ok(OptimState {
            kind,
            step_size,
            step: 0,
            m_weights: zeros_w(net),
            m_biases: zeros_b(net),
            v_weights: zeros_w(net),
            v_biases: zeros_b(net),
        })
    }

    pub fn adam(step_size: f64, net: &Net) -> Result<Self> {
        Self::new(OptimKind::Adam, step_size, net)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Drops accumulated moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for m in &mut self.m_weights {
            m.fill(0.0);
        }
        for m in &mut self.m_biases {
            m.fill(0.0);
        }
        for v in &mut self.v_weights {
            v.fill(0.0);
        }
        for v in &mut self.v_biases {
            v.fill(0.0);
        }
    }

    /// Applies one optimizer update to `net` in place.
    pub fn apply(&mut self, net: &mut Net, grads: &GradBundle) {
        match self.kind {
            OptimKind::Adam => self.adam_step(net, grads),
            OptimKind::RmsProp => self.rmsprop_step(net, grads),
        }
    }

    fn adam_step(&mut self, net: &mut Net, grads: &GradBundle) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.step_size;
        for layer in 0..net.num_layers() {
            {
                let g = &grads.weights[layer];
                let m = &mut self.m_weights[layer];
                let v = &mut self.v_weights[layer];
                ndarray::Zip::from(net.weight_mut(layer))
                    .and(g)
                    .and(m)
                    .and(v)
                    .for_each(|p, &g, m, v| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    });
            }
            {
                let g = &grads.biases[layer];
                let m = &mut self.m_biases[layer];
                let v = &mut self.v_biases[layer];
                ndarray::Zip::from(net.bias_mut(layer))
                    .and(g)
                    .and(m)
                    .and(v)
                    .for_each(|p, &g, m, v| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    });
            }
        }
    }

    fn rmsprop_step(&mut self, net: &mut Net, grads: &GradBundle) {
        self.step += 1;
        let lr = self.step_size;
        for layer in 0..net.num_layers() {
            {
                let g = &grads.weights[layer];
                let v = &mut self.v_weights[layer];
                ndarray::Zip::from(net.weight_mut(layer))
                    .and(g)
                    .and(v)
                    .for_each(|p, &g, v| {
                        *v = RMSPROP_ALPHA * *v + (1.0 - RMSPROP_ALPHA) * g * g;
                        *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
                    });
            }
            {
                let g = &grads.biases[layer];
                let v = &mut self.v_biases[layer];
                ndarray::Zip::from(net.bias_mut(layer))
                    .and(g)
                    .and(v)
                    .for_each(|p, &g, v| {
                        *v = RMSPROP_ALPHA * *v + (1.0 - RMSPROP_ALPHA) * g * g;
                        *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
                    });
            }
        }
    }
}

/// Exponential tracking of online parameters:
/// `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Net, online: &Net, tau: f64) {
    debug_assert_eq!(target.layer_dims(), online.layer_dims());
    for layer in 0..target.num_layers() {
        ndarray::Zip::from(target.weight_mut(layer))
            .and(online.weight(layer))
            .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
        ndarray::Zip::from(target.bias_mut(layer))
            .and(online.bias(layer))
            .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
    }
}
