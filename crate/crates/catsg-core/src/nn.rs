//! Minimal dense neural-network building blocks.
//!
//! Everything here is plain `f64` with explicit forward/backward passes, so
//! gradients can be checked against central finite differences. Dimensions at
//! this project's scale (a few hundred units) do not justify a tensor
//! library.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// slope 0.2 on the negative side
    LeakyRelu,
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    0.2 * x
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.2
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Binary cross-entropy on a logit, with its gradient in logit space.
///
/// Returns `(loss, dloss/dlogit)`; the gradient is `sigmoid(z) - target`.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * target + (1.0 + (-logit.abs()).exp()).ln();
    (loss, sigmoid(logit) - target)
}

/// Softmax cross-entropy on logits; gradient is `softmax(z) - onehot`.
pub fn cross_entropy_with_logits(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -(probs[target].max(1e-300)).ln();
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// He-uniform initialization.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, input: &[f64], output: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim);
        output.clear();
        output.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            output.push(acc);
        }
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o];
            grad_bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad_weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * input[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

/// Multi-layer perceptron with a fixed hidden activation and linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Per-layer activations cached during the forward pass.
pub struct MlpCache {
    /// inputs[i] is the input to layer i; last entry is the pre-activation
    /// output of the final layer.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Gradients mirroring an [`Mlp`]'s parameter shapes.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims` = [input, hidden..., output].
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Forward pass producing output logits (no cache).
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(&current, &mut next);
            if li + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        current
    }

    /// Forward pass with caches for [`Self::backward`]. Returns the logits.
    pub fn forward_cached(&self, input: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.inputs.clear();
        cache.pre.clear();
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(current.clone());
            layer.forward(&current, &mut next);
            cache.pre.push(next.clone());
            if li + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        current
    }

    /// Backward pass from the gradient w.r.t. output logits; accumulates into
    /// `grads` and returns the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, grad_logits: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let mut grad = grad_logits.to_vec();
        for li in (0..self.layers.len()).rev() {
            if li + 1 < self.layers.len() {
                for (g, &z) in grad.iter_mut().zip(&cache.pre[li]) {
                    *g *= self.activation.derivative(z);
                }
            }
            grad = self.layers[li].backward(
                &cache.inputs[li],
                &grad,
                &mut grads.weight[li],
                &mut grads.bias[li],
            );
        }
        grad
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weight: self.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn new_cache() -> MlpCache {
        MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        }
    }

    /// All parameters flattened, layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            let w_len = l.weight.len();
            l.weight.copy_from_slice(&flat[offset..offset + w_len]);
            offset += w_len;
            let b_len = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + b_len]);
            offset += b_len;
        }
        assert_eq!(offset, flat.len());
    }

    pub fn grads_flat(grads: &MlpGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in grads.weight.iter().zip(&grads.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Plain SGD with momentum over flat parameter vectors.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        for i in 0..params.len() {
            self.velocity[i] = self.momentum * self.velocity[i] - self.lr * grads[i];
            params[i] += self.velocity[i];
        }
    }
}

/// Adam over flat parameter vectors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Central-difference gradient of a scalar function of flat parameters.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work);
        work[i] = orig - h;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative error between analytic and numeric gradients. The
/// denominator floor sits above central-difference cancellation noise
/// (~1e-11 at h = 1e-5), so coordinates whose true gradient is at roundoff
/// scale do not register as spurious mismatches.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
