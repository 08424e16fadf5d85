//! Small dense networks with hand-rolled backprop: 2 hidden ReLU layers and a
//! linear scalar head, trained with decoupled-weight-decay Adam. Everything is
//! f64 and strictly sequential, so identical inputs give bitwise-identical
//! results.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ValueFnError;

/// One affine layer; weights are row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        // uniform in +/- sqrt(6/(fan_in+fan_out)), biases zero
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound)
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(out.len(), self.outputs);
        for (o, out_val) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_val = acc;
        }
    }
}

/// A 2-hidden-layer ReLU MLP with a linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-sample activations kept for the backward pass.
pub struct ForwardTrace {
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    h2_pre: Vec<f64>,
    h2: Vec<f64>,
}

impl Mlp {
    /// Initialize `inputs -> hidden.0 -> hidden.1 -> 1` from the RNG stream.
    /// Layers are drawn in order, weights row-major within each layer.
    pub fn init<R: Rng>(inputs: usize, hidden: (usize, usize), rng: &mut R) -> Self {
        Self {
            layers: vec![
                DenseLayer::init(inputs, hidden.0, rng),
                DenseLayer::init(hidden.0, hidden.1, rng),
                DenseLayer::init(hidden.1, 1, rng),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Scalar forward pass: affine, ReLU, affine, ReLU, affine.
    pub fn forward(&self, x: &[f64]) -> Result<f64, ValueFnError> {
        if x.len() != self.input_dim() {
            return Err(ValueFnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_traced(x).1)
    }

    fn forward_traced(&self, x: &[f64]) -> (ForwardTrace, f64) {
        let (l1, l2, l3) = (&self.layers[0], &self.layers[1], &self.layers[2]);
        let mut h1_pre = vec![0.0; l1.outputs];
        l1.forward(x, &mut h1_pre);
        let h1: Vec<f64> = h1_pre.iter().map(|v| v.max(0.0)).collect();
        let mut h2_pre = vec![0.0; l2.outputs];
        l2.forward(&h1, &mut h2_pre);
        let h2: Vec<f64> = h2_pre.iter().map(|v| v.max(0.0)).collect();
        let mut out = [0.0];
        l3.forward(&h2, &mut out);
        (
            ForwardTrace {
                h1_pre,
                h1,
                h2_pre,
                h2,
            },
            out[0],
        )
    }

    /// Accumulate parameter gradients for one sample, given dL/d(output).
    /// The ReLU derivative at exactly zero is taken as zero.
    fn backward(&self, x: &[f64], trace: &ForwardTrace, d_out: f64, grads: &mut MlpGrads) {
        let (l2, l3) = (&self.layers[1], &self.layers[2]);

        // output layer
        let g3 = &mut grads.layers[2];
        for (j, h) in trace.h2.iter().enumerate() {
            g3.weights[j] += d_out * h;
        }
        g3.bias[0] += d_out;
        let mut d_h2: Vec<f64> = l3.weights.iter().map(|w| d_out * w).collect();

        // second hidden layer
        for (j, d) in d_h2.iter_mut().enumerate() {
            if trace.h2_pre[j] <= 0.0 {
                *d = 0.0;
            }
        }
        let g2 = &mut grads.layers[1];
        let mut d_h1 = vec![0.0; l2.inputs];
        for (j, &dj) in d_h2.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            let row = j * l2.inputs;
            for (k, h) in trace.h1.iter().enumerate() {
                g2.weights[row + k] += dj * h;
                d_h1[k] += dj * l2.weights[row + k];
            }
            g2.bias[j] += dj;
        }

        // first hidden layer
        for (k, d) in d_h1.iter_mut().enumerate() {
            if trace.h1_pre[k] <= 0.0 {
                *d = 0.0;
            }
        }
        let l1_inputs = self.layers[0].inputs;
        let g1 = &mut grads.layers[0];
        for (k, &dk) in d_h1.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            let row = k * l1_inputs;
            for (i, xi) in x.iter().enumerate() {
                g1.weights[row + i] += dk * xi;
            }
            g1.bias[k] += dk;
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`Mlp::flatten`]; panics on length mismatch.
    pub fn unflatten_into(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Gradient (or moment) buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Asymmetric squared loss: `tau * u^2` for `u >= 0`, `(1-tau) * u^2` otherwise.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u >= 0.0 { tau } else { 1.0 - tau };
    w * u * u
}

/// d/du of [`expectile_loss`]; zero at the (non-smooth) origin.
pub fn expectile_loss_grad(u: f64, tau: f64) -> f64 {
    let w = if u >= 0.0 { tau } else { 1.0 - tau };
    2.0 * w * u
}

/// Mean squared error `mean_i (net(x_i) - y_i)^2` with parameter gradients.
pub fn squared_error_loss_grads(
    net: &Mlp,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<(f64, MlpGrads), ValueFnError> {
    assert_eq!(xs.len(), ys.len());
    let mut grads = MlpGrads::zeros_like(net);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != net.input_dim() {
            return Err(ValueFnError::DimensionMismatch {
                expected: net.input_dim(),
                got: x.len(),
            });
        }
        let (trace, out) = net.forward_traced(x);
        let residual = out - y;
        loss += residual * residual / n;
        net.backward(x, &trace, 2.0 * residual / n, &mut grads);
    }
    Ok((loss, grads))
}

/// Mean expectile regression loss `mean_i L2^tau(target_i - net(x_i))` with
/// parameter gradients.
pub fn expectile_regression_loss_grads(
    net: &Mlp,
    xs: &[Vec<f64>],
    targets: &[f64],
    tau: f64,
) -> Result<(f64, MlpGrads), ValueFnError> {
    assert_eq!(xs.len(), targets.len());
    let mut grads = MlpGrads::zeros_like(net);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &target) in xs.iter().zip(targets) {
        if x.len() != net.input_dim() {
            return Err(ValueFnError::DimensionMismatch {
                expected: net.input_dim(),
                got: x.len(),
            });
        }
        let (trace, out) = net.forward_traced(x);
        let u = target - out;
        loss += expectile_loss(u, tau) / n;
        // d/d(out) = -dL/du
        net.backward(x, &trace, -expectile_loss_grad(u, tau) / n, &mut grads);
    }
    Ok((loss, grads))
}

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
            step: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        let finite = |g: &MlpGrads| {
            g.layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
        };
        finite(&self.m) && finite(&self.v)
    }
}

/// One AdamW update; weight decay is decoupled from the moment estimates and
/// applied to every parameter.
pub fn adamw_update(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, opt: &AdamW) {
    state.step += 1;
    let bc1 = 1.0 - opt.beta1.powi(state.step as i32);
    let bc2 = 1.0 - opt.beta2.powi(state.step as i32);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= opt.lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * *p);
        };
        for i in 0..layer.weights.len() {
            update(&mut layer.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
}

/// Blend `target <- (1-alpha)*target + alpha*online`, entrywise.
pub fn polyak(target: &mut Mlp, online: &Mlp, alpha: f64) -> Result<(), ValueFnError> {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
    if target.layers.len() != online.layers.len() {
        return Err(ValueFnError::ShapeMismatch);
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        if t.weights.len() != o.weights.len() || t.bias.len() != o.bias.len() {
            return Err(ValueFnError::ShapeMismatch);
        }
        for (tw, ow) in t.weights.iter_mut().zip(&o.weights) {
            *tw = (1.0 - alpha) * *tw + alpha * ow;
        }
        for (tb, ob) in t.bias.iter_mut().zip(&o.bias) {
            *tb = (1.0 - alpha) * *tb + alpha * ob;
        }
    }
    Ok(())
}
