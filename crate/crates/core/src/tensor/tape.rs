//! Reverse-mode gradients via an eager operation tape.
//!
//! Values are dense `(rows, cols)` matrices; a batch occupies rows. Losses
//! are 1×1 nodes. The tape records parents at construction and replays them
//! backward from a scalar loss, accumulating gradients per node.
//!
//! Gradient flow is controlled structurally: constants and anything behind
//! [`Tape::stop_grad`] never receive or propagate gradients. Training code
//! builds regression targets through `stop_grad` so that no gradient can
//! reach target networks or the policies substituted inside targets.

use ndarray::{Array1, Array2, Axis};

use super::{Net, OutputActivation, LAYER_NORM_EPS};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGrad,
    MatMul(NodeId, NodeId),
    /// Adds a 1×n bias row to every row of the left operand.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    LayerNorm(NodeId),
    Softmax(NodeId),
    ConcatCols(Vec<NodeId>),
    /// Scalar: mean over rows of the squared row norm.
    MeanSqRowNorm(NodeId),
    /// Scalar: mean over every element.
    MeanAll(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Eagerly evaluated computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    by_node: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.by_node.get_mut(id).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Reads a 1×1 node as a scalar.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        assert_eq!(v.dim(), (1, 1), "node {id} is not a scalar");
        v[(0, 0)]
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn any_needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id].needs_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates gradients.
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Passes the value through and blocks all gradient flow.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.clone();
        self.push(value, Op::StopGrad, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        assert_eq!(self.nodes[bias].value.nrows(), 1, "bias must be a row");
        let mut value = self.nodes[a].value.clone();
        value += &self.nodes[bias].value.row(0).insert_axis(Axis(0));
        let ng = self.any_needs(&[a, bias]);
        self.push(value, Op::AddBias(a, bias), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value - &self.nodes[b].value;
        let ng = self.any_needs(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a].value * c;
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| v.max(0.0));
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(f64::tanh);
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        super::layer_norm_rows(&mut value);
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::LayerNorm(a), ng)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = super::softmax_rows(&self.nodes[a].value);
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::Softmax(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut col = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.nrows(), rows, "concat rows must match");
            value
                .slice_mut(ndarray::s![.., col..col + v.ncols()])
                .assign(v);
            col += v.ncols();
        }
        let ng = self.any_needs(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn mean_sq_row_norm(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let total: f64 = v.iter().map(|x| x * x).sum();
        let value = Array2::from_elem((1, 1), total / v.nrows() as f64);
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::MeanSqRowNorm(a), ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let ng = self.nodes[a].needs_grad;
        self.push(value, Op::MeanAll(a), ng)
    }

    /// Accumulates gradients of a scalar loss with respect to every node
    /// that can reach it. Nodes that do not require gradients are skipped.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(
            self.nodes[loss].value.dim(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut by_node: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        by_node[loss] = Some(Array2::ones((1, 1)));

        for id in (0..=loss).rev() {
            let Some(g) = by_node[id].take() else {
                continue;
            };
            // Leaves keep their accumulated gradient; interior nodes hand it on.
            match &self.nodes[id].op {
                Op::Leaf => {
                    by_node[id] = Some(g);
                    continue;
                }
                op => {
                    self.propagate(op, id, &g, &mut by_node);
                    // Interior gradients stay readable for probes and tests.
                    by_node[id] = Some(g);
                }
            }
        }
        Grads { by_node }
    }

    fn accumulate(
        by_node: &mut [Option<Array2<f64>>],
        id: NodeId,
        contribution: Array2<f64>,
    ) {
        match &mut by_node[id] {
            Some(existing) => *existing += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        id: NodeId,
        g: &Array2<f64>,
        by_node: &mut [Option<Array2<f64>>],
    ) {
        match op {
            Op::Leaf => {}
            Op::StopGrad => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].needs_grad {
                    let da = g.dot(&self.nodes[*b].value.t());
                    Self::accumulate(by_node, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let db = self.nodes[*a].value.t().dot(g);
                    Self::accumulate(by_node, *b, db);
                }
            }
            Op::AddBias(a, bias) => {
                if self.nodes[*a].needs_grad {
                    Self::accumulate(by_node, *a, g.clone());
                }
                if self.nodes[*bias].needs_grad {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    Self::accumulate(by_node, *bias, db);
                }
            }
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    Self::accumulate(by_node, *a, g.clone());
                }
                if self.nodes[*b].needs_grad {
                    Self::accumulate(by_node, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[*a].needs_grad {
                    Self::accumulate(by_node, *a, g.clone());
                }
                if self.nodes[*b].needs_grad {
                    Self::accumulate(by_node, *b, g.mapv(|v| -v));
                }
            }
            Op::Scale(a, c) => {
                if self.nodes[*a].needs_grad {
                    Self::accumulate(by_node, *a, g.mapv(|v| v * c));
                }
            }
            Op::Relu(a) => {
                if self.nodes[*a].needs_grad {
                    let mask = self.nodes[id].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Self::accumulate(by_node, *a, g * &mask);
                }
            }
            Op::Tanh(a) => {
                if self.nodes[*a].needs_grad {
                    let y = &self.nodes[id].value;
                    let d = g * &y.mapv(|v| 1.0 - v * v);
                    Self::accumulate(by_node, *a, d);
                }
            }
            Op::LayerNorm(a) => {
                if self.nodes[*a].needs_grad {
                    let x = &self.nodes[*a].value;
                    let y = &self.nodes[id].value;
                    let mut dx = Array2::zeros(x.raw_dim());
                    for (r, x_row) in x.rows().into_iter().enumerate() {
                        let n = x_row.len() as f64;
                        let mean = x_row.sum() / n;
                        let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let y_row = y.row(r);
                        let g_row = g.row(r);
                        let g_mean = g_row.sum() / n;
                        let gy_mean = g_row
                            .iter()
                            .zip(y_row.iter())
                            .map(|(gi, yi)| gi * yi)
                            .sum::<f64>()
                            / n;
                        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = inv_std * (g_row[c] - g_mean - y_row[c] * gy_mean);
                        }
                    }
                    Self::accumulate(by_node, *a, dx);
                }
            }
            Op::Softmax(a) => {
                if self.nodes[*a].needs_grad {
                    let y = &self.nodes[id].value;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for (r, y_row) in y.rows().into_iter().enumerate() {
                        let g_row = g.row(r);
                        let dot = g_row
                            .iter()
                            .zip(y_row.iter())
                            .map(|(gi, yi)| gi * yi)
                            .sum::<f64>();
                        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = y_row[c] * (g_row[c] - dot);
                        }
                    }
                    Self::accumulate(by_node, *a, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.nodes[p].value.ncols();
                    if self.nodes[p].needs_grad {
                        let slice = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        Self::accumulate(by_node, p, slice);
                    }
                    col += w;
                }
            }
            Op::MeanSqRowNorm(a) => {
                if self.nodes[*a].needs_grad {
                    let x = &self.nodes[*a].value;
                    let scale = 2.0 * g[(0, 0)] / x.nrows() as f64;
                    Self::accumulate(by_node, *a, x.mapv(|v| v * scale));
                }
            }
            Op::MeanAll(a) => {
                if self.nodes[*a].needs_grad {
                    let x = &self.nodes[*a].value;
                    let scale = g[(0, 0)] / x.len() as f64;
                    Self::accumulate(by_node, *a, Array2::from_elem(x.raw_dim(), scale));
                }
            }
        }
    }
}

/// Whether a network's parameters enter the tape as trainable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

/// Node handles for one network evaluated on a tape.
pub struct TapedNet {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    pub output: NodeId,
}

impl Net {
    /// Evaluates the network on the tape, registering its parameters as
    /// leaves. `SoftmaxLogits` outputs stay as logits, matching
    /// [`Net::forward_batch`].
    pub fn forward_on_tape(&self, tape: &mut Tape, input: NodeId, mode: ParamMode) -> TapedNet {
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        let last = self.num_layers() - 1;
        let mut x = input;
        for layer in 0..self.num_layers() {
            let w_val = self.weight(layer).clone();
            let b_val = self
                .bias(layer)
                .clone()
                .insert_axis(Axis(0));
            let (w, b) = match mode {
                ParamMode::Trainable => (tape.param(w_val), tape.param(b_val)),
                ParamMode::Frozen => (tape.constant(w_val), tape.constant(b_val)),
            };
            weights.push(w);
            biases.push(b);
            let mut z = tape.matmul(x, w);
            z = tape.add_bias(z, b);
            if layer < last {
                if self.layer_norm_flags()[layer] {
                    z = tape.layer_norm(z);
                }
                z = tape.relu(z);
            } else if self.output_activation() == OutputActivation::Tanh {
                z = tape.tanh(z);
            }
            x = z;
        }
        TapedNet {
            weights,
            biases,
            output: x,
        }
    }
}

/// Per-parameter gradients for one [`Net`], shape-congruent with it.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GradBundle {
    pub fn zeros_like(net: &Net) -> Self {
        GradBundle {
            weights: (0..net.num_layers())
                .map(|l| Array2::zeros(net.weight(l).raw_dim()))
                .collect(),
            biases: (0..net.num_layers())
                .map(|l| Array1::zeros(net.bias(l).len()))
                .collect(),
        }
    }

    /// Collects this net's gradients out of a backward pass; missing entries
    /// (no gradient path) are zero.
    pub fn from_taped(taped: &TapedNet, grads: &mut Grads, net: &Net) -> Self {
        let mut bundle = GradBundle::zeros_like(net);
        for (l, &wid) in taped.weights.iter().enumerate() {
            if let Some(g) = grads.take(wid) {
                bundle.weights[l] = g;
            }
        }
        for (l, &bid) in taped.biases.iter().enumerate() {
            if let Some(g) = grads.take(bid) {
                bundle.biases[l] = g.remove_axis(Axis(0));
            }
        }
        bundle
    }

    /// Adds another bundle element-wise; shapes must match.
    pub fn add_assign(&mut self, other: &GradBundle) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Global L2 norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for w in &self.weights {
            sq += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            sq += b.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for w in &self.weights {
            for v in w {
                m = m.max(v.abs());
            }
        }
        for b in &self.biases {
            for v in b {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Rescales the bundle so its global L2 norm does not exceed `threshold`;
/// bundles already inside the ball are returned unchanged.
pub fn clip_gradients(mut grads: GradBundle, threshold: f64) -> GradBundle {
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for w in &mut grads.weights {
            w.mapv_inplace(|v| v * scale);
        }
        for b in &mut grads.biases {
            b.mapv_inplace(|v| v * scale);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init_glorot, init_kaiming};
    use ndarray::arr2;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of a scalar-valued closure over one
    /// parameter entry of a net.
    fn finite_diff(net: &Net, loss: &dyn Fn(&Net) -> f64, h: f64) -> GradBundle {
        let mut bundle = GradBundle::zeros_like(net);
        for layer in 0..net.num_layers() {
            for idx in 0..net.weight(layer).len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                {
                    let w = plus.weight_mut(layer).as_slice_mut().unwrap();
                    w[idx] += h;
                }
                {
                    let w = minus.weight_mut(layer).as_slice_mut().unwrap();
                    w[idx] -= h;
                }
                let d = (loss(&plus) - loss(&minus)) / (2.0 * h);
                bundle.weights[layer].as_slice_mut().unwrap()[idx] = d;
            }
            for idx in 0..net.bias(layer).len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.bias_mut(layer)[idx] += h;
                minus.bias_mut(layer)[idx] -= h;
                let d = (loss(&plus) - loss(&minus)) / (2.0 * h);
                bundle.biases[layer][idx] = d;
            }
        }
        bundle
    }

    fn max_rel_err(analytic: &GradBundle, numeric: &GradBundle) -> f64 {
        let mut worst = 0.0f64;
        let pairs = analytic
            .weights
            .iter()
            .zip(&numeric.weights)
            .map(|(a, n)| (a.iter(), n.iter()));
        for (ai, ni) in pairs {
            for (a, n) in ai.zip(ni) {
                let scale = a.abs().max(n.abs()).max(1.0);
                worst = worst.max((a - n).abs() / scale);
            }
        }
        for (ab, nb) in analytic.biases.iter().zip(&numeric.biases) {
            for (a, n) in ab.iter().zip(nb.iter()) {
                let scale = a.abs().max(n.abs()).max(1.0);
                worst = worst.max((a - n).abs() / scale);
            }
        }
        worst
    }

    fn mse_loss(net: &Net, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let pred = net.forward_batch(x);
        let diff = &pred - y;
        diff.iter().map(|v| v * v).sum::<f64>() / diff.nrows() as f64
    }

    fn mse_grads(net: &Net, x: &Array2<f64>, y: &Array2<f64>) -> (f64, GradBundle) {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let taped = net.forward_on_tape(&mut tape, input, ParamMode::Trainable);
        let target = tape.constant(y.clone());
        let diff = tape.sub(taped.output, target);
        let loss = tape.mean_sq_row_norm(diff);
        let value = tape.scalar(loss);
        let mut grads = tape.backward(loss);
        (value, GradBundle::from_taped(&taped, &mut grads, net))
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let net = init_glorot(&[3, 4, 2], 0).unwrap();
        let x = arr2(&[[0.1, 0.2, 0.3]]);
        let y = net.forward_batch(&x);
        let (loss, grads) = mse_grads(&net, &x, &y);
        assert_eq!(loss, 0.0);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn single_layer_quadratic_matches_closed_form() {
        // loss = ||W x - y||^2 for one sample; dW = 2 (Wx - y) x^T.
        let mut net = init_glorot(&[3, 2], 4).unwrap();
        net.weight_mut(0).assign(&arr2(&[[0.5, -0.2], [0.1, 0.9], [-0.3, 0.4]]));
        let x = arr2(&[[1.0, -2.0, 0.5]]);
        let y = arr2(&[[0.2, -0.1]]);
        let (_, grads) = mse_grads(&net, &x, &y);
        let residual = &net.forward_batch(&x) - &y;
        for i in 0..3 {
            for j in 0..2 {
                let closed = 2.0 * residual[(0, j)] * x[(0, i)];
                assert!(
                    (grads.weights[0][(i, j)] - closed).abs() < 1e-10,
                    "dW[{i},{j}] = {} vs closed form {closed}",
                    grads.weights[0][(i, j)]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (seed, ln, act) in [
            (0u64, false, OutputActivation::Linear),
            (1, true, OutputActivation::Linear),
            (2, false, OutputActivation::Tanh),
            (3, true, OutputActivation::Tanh),
        ] {
            let net = init_glorot(&[4, 8, 3], seed)
                .unwrap()
                .with_layer_norm(ln)
                .with_output_activation(act);
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            let (_, analytic) = mse_grads(&net, &x, &y);
            let numeric = finite_diff(&net, &|n| mse_loss(n, &x, &y), 1e-5);
            let err = max_rel_err(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed} ln {ln}: max rel err {err}");
        }
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = init_kaiming(&[3, 6, 4], 9)
            .unwrap()
            .with_output_activation(OutputActivation::SoftmaxLogits);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((4, 4), |_| rng.random_range(0.0..1.0));
        let loss_of = |n: &Net| {
            let probs = crate::tensor::softmax_rows(&n.forward_batch(&x));
            let diff = &probs - &y;
            diff.iter().map(|v| v * v).sum::<f64>() / diff.nrows() as f64
        };
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let taped = net.forward_on_tape(&mut tape, input, ParamMode::Trainable);
        let probs = tape.softmax(taped.output);
        let target = tape.constant(y.clone());
        let diff = tape.sub(probs, target);
        let loss = tape.mean_sq_row_norm(diff);
        let mut grads = tape.backward(loss);
        let analytic = GradBundle::from_taped(&taped, &mut grads, &net);
        let numeric = finite_diff(&net, &loss_of, 1e-5);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let net = init_glorot(&[2, 3], 1).unwrap();
        let x = arr2(&[[0.5, -0.5]]);
        let mut tape = Tape::new();
        let input = tape.constant(x);
        let taped = net.forward_on_tape(&mut tape, input, ParamMode::Trainable);
        let blocked = tape.stop_grad(taped.output);
        let loss = tape.mean_sq_row_norm(blocked);
        assert!(tape.scalar(loss) > 0.0);
        let mut grads = tape.backward(loss);
        let bundle = GradBundle::from_taped(&taped, &mut grads, &net);
        assert_eq!(bundle.global_norm(), 0.0);
    }

    #[test]
    fn non_scalar_backward_panics() {
        let mut tape = Tape::new();
        let a = tape.param(arr2(&[[1.0, 2.0]]));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| tape.backward(a)));
        assert!(result.is_err());
    }

    #[test]
    fn clip_leaves_small_bundles_alone() {
        let net = init_glorot(&[2, 2], 0).unwrap();
        let mut bundle = GradBundle::zeros_like(&net);
        bundle.weights[0][(0, 0)] = 0.3;
        let before = bundle.clone();
        let clipped = clip_gradients(bundle, 0.5);
        assert_eq!(clipped.weights[0], before.weights[0]);
    }

    #[test]
    fn clip_rescales_proportionally() {
        let net = init_glorot(&[2, 1], 0).unwrap();
        let mut bundle = GradBundle::zeros_like(&net);
        bundle.weights[0][(0, 0)] = 3.0;
        bundle.weights[0][(1, 0)] = 4.0;
        let clipped = clip_gradients(bundle, 0.5);
        assert!((clipped.weights[0][(0, 0)] - 0.3).abs() < 1e-12);
        assert!((clipped.weights[0][(1, 0)] - 0.4).abs() < 1e-12);
        assert!((clipped.global_norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_norm_is_min_of_pre_norm_and_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let net = init_glorot(&[3, 5, 2], 6).unwrap();
        for _ in 0..20 {
            let mut bundle = GradBundle::zeros_like(&net);
            for w in &mut bundle.weights {
                w.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            }
            for b in &mut bundle.biases {
                b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            }
            let pre = bundle.global_norm();
            let post = clip_gradients(bundle, 0.5).global_norm();
            assert!((post - pre.min(0.5)).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let net = init_glorot(&[2, 3], 0).unwrap();
            let mut bundle = GradBundle::zeros_like(&net);
            for (slot, v) in bundle.weights[0].iter_mut().zip(values.iter()) {
                *slot = *v;
            }
            let once = clip_gradients(bundle, 0.5);
            let twice = clip_gradients(once.clone(), 0.5);
            for (a, b) in once.weights[0].iter().zip(twice.weights[0].iter()) {
                proptest::prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
