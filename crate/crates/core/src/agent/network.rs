//! Fully connected ReLU network with a hand-written backward pass, and Adam.
//!
//! Parameters live in one flat vector. Per layer: the weight matrix stored
//! input-major (`w[i * out + o]`), followed by the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("input width {got} does not match network input {expected}")]
    Width { expected: usize, got: usize },
    #[error("batch of {inputs} inputs but {labels} actions/targets")]
    Batch { inputs: usize, labels: usize },
    #[error("network needs at least an input and an output layer")]
    Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate activations of a batch forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct Activations {
    batch: usize,
    /// `layers[0]` is the input, the last entry the output.
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mlp {
    /// Zero-initialised network with the given layer widths.
    pub fn zeros(sizes: &[usize]) -> Result<Self, NetworkError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetworkError::Shape);
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; count] })
    }

    /// He-uniform weights, zero biases.
    pub fn he_uniform(sizes: &[usize], rng: &mut impl Rng) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let limit = (6.0 / w[0] as f64).sqrt();
            for p in &mut net.params[offset..offset + w[0] * w[1]] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    /// Input → 2·input → 2·input → actions.
    pub fn q_network(input: usize, actions: usize, rng: &mut impl Rng) -> Result<Self, NetworkError> {
        Self::he_uniform(&[input, 2 * input, 2 * input, actions], rng)
    }

    pub fn from_parts(sizes: &[usize], params: Vec<f64>) -> Result<Self, NetworkError> {
        let net = Self::zeros(sizes)?;
        if net.params.len() != params.len() {
            return Err(NetworkError::Width { expected: net.params.len(), got: params.len() });
        }
        Ok(Self { params, ..net })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let at = offset;
                offset += w[0] * w[1] + w[1];
                (at, w[0], w[1])
            })
            .collect()
    }

    /// Forward pass over `inputs.len() / input_width` rows.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Activations, NetworkError> {
        let width = self.input_width();
        if !inputs.len().is_multiple_of(width) {
            return Err(NetworkError::Width { expected: width, got: inputs.len() });
        }
        let batch = inputs.len() / width;
        let offsets = self.layer_offsets();
        let mut layers = Vec::with_capacity(offsets.len() + 1);
        layers.push(inputs.to_vec());
        for (li, &(at, n_in, n_out)) in offsets.iter().enumerate() {
            let (w, b) = self.params[at..at + n_in * n_out + n_out].split_at(n_in * n_out);
            let x = layers.last().expect("input pushed");
            let mut y = Vec::with_capacity(batch * n_out);
            for row in x.chunks_exact(n_in) {
                let start = y.len();
                y.extend_from_slice(b);
                let out = &mut y[start..];
                for (i, &xi) in row.iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, &w[i * n_out..(i + 1) * n_out], out);
                    }
                }
            }
            if li + 1 < offsets.len() {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            layers.push(y);
        }
        Ok(Activations { batch, layers })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if input.len() != self.input_width() {
            return Err(NetworkError::Width { expected: self.input_width(), got: input.len() });
        }
        Ok(self.forward_batch(input)?.output().to_vec())
    }

    /// Weighted mean squared TD error on the taken actions and its gradient:
    /// `L = (1/B) Σ_b w_b (Q(s_b, a_b) − y_b)²`. Returns `(loss, grad, td)`.
    pub fn td_gradient(
        &self,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>), NetworkError> {
        let acts = self.forward_batch(inputs)?;
        let batch = acts.batch;
        if actions.len() != batch || targets.len() != batch || weights.is_some_and(|w| w.len() != batch) {
            return Err(NetworkError::Batch { inputs: batch, labels: actions.len().min(targets.len()) });
        }
        let n_out = self.output_width();
        let out = acts.output();
        let mut delta = vec![0.0; batch * n_out];
        let mut loss = 0.0;
        let mut td = Vec::with_capacity(batch);
        for b in 0..batch {
            let w = weights.map_or(1.0, |w| w[b]);
            let err = out[b * n_out + actions[b]] - targets[b];
            td.push(err);
            loss += w * err * err;
            delta[b * n_out + actions[b]] = 2.0 * w * err / batch as f64;
        }
        loss /= batch as f64;
        Ok((loss, self.backward(&acts, delta), td))
    }

    /// Gradient of a scalar loss given `dL/d(output)` for every row.
    pub fn backward(&self, acts: &Activations, mut delta: Vec<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let offsets = self.layer_offsets();
        for (li, &(at, n_in, n_out)) in offsets.iter().enumerate().rev() {
            let x = &acts.layers[li];
            let (gw, gb) = grad[at..at + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (row, d) in x.chunks_exact(n_in).zip(delta.chunks_exact(n_out)) {
                axpy(1.0, d, gb);
                for (i, &xi) in row.iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, d, &mut gw[i * n_out..(i + 1) * n_out]);
                    }
                }
            }
            if li == 0 {
                break;
            }
            let w = &self.params[at..at + n_in * n_out];
            let mut prev = vec![0.0; acts.batch * n_in];
            for ((p, d), row) in prev.chunks_exact_mut(n_in).zip(delta.chunks_exact(n_out)).zip(x.chunks_exact(n_in)) {
                for i in 0..n_in {
                    // ReLU: inputs to this layer are post-activation values.
                    if row[i] > 0.0 {
                        p[i] = dot(&w[i * n_out..(i + 1) * n_out], d);
                    }
                }
            }
            delta = prev;
        }
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 6.25e-5, beta1: 0.9, beta2: 0.999, epsilon: 1.5e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; params], v: vec![0.0; params] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
    }
}
