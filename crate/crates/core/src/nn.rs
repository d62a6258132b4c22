//! Small fully connected networks over flat parameter vectors.
//!
//! Parameters are laid out layer by layer as `W` (row-major, `out x in`)
//! followed by `b`. Hidden layers use the configured activation; the output
//! layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Swish,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Swish => z / (1.0 + (-z).exp()),
            Activation::Tanh => {
                // Cheaper than libm tanh and accurate to a few ulps in absolute terms.
                let e = (2.0 * z.clamp(-40.0, 40.0)).exp();
                1.0 - 2.0 / (e + 1.0)
            }
        }
    }

    /// Derivative given the pre-activation `z` and the activation value `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = 1.0 / (1.0 + (-z).exp());
                s + z * s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

/// Per-layer pre-activations and activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has layers")
    }
}

/// Reusable buffers for allocation-free forward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Mlp { sizes, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform Glorot initialization. With `zero_output` the last layer starts
    /// at zero so the network initially outputs exactly zero.
    pub fn init<R: Rng>(&self, rng: &mut R, zero_output: bool) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let n_layers = self.sizes.len() - 1;
        for (l, (start, fan_in, fan_out)) in self.layers().enumerate() {
            if zero_output && l + 1 == n_layers {
                continue;
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params[start..start + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        params
    }

    pub fn workspace(&self) -> Workspace {
        let width = *self.sizes.iter().max().unwrap();
        Workspace {
            a: vec![0.0; width],
            b: vec![0.0; width],
        }
    }

    /// Forward pass writing the output into `out`.
    pub fn forward_into(&self, params: &[f64], input: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        debug_assert_eq!(params.len(), self.param_count());
        let n_layers = self.sizes.len() - 1;
        ws.a[..input.len()].copy_from_slice(input);
        for (l, (start, n_in, n_out)) in self.layers().enumerate() {
            let (w, rest) = params[start..].split_at(n_in * n_out);
            let bias = &rest[..n_out];
            let last = l + 1 == n_layers;
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = bias[o];
                for (wi, xi) in row.iter().zip(&ws.a[..n_in]) {
                    z += wi * xi;
                }
                ws.b[o] = if last { z } else { self.activation.apply(z) };
            }
            std::mem::swap(&mut ws.a, &mut ws.b);
        }
        out.copy_from_slice(&ws.a[..self.output_dim()]);
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(params, input, &mut ws, &mut out);
        out
    }

    pub fn forward_cached(&self, params: &[f64], input: &[f64]) -> Cache {
        let n_layers = self.sizes.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        post.push(input.to_vec());
        for (l, (start, n_in, n_out)) in self.layers().enumerate() {
            let (w, rest) = params[start..].split_at(n_in * n_out);
            let bias = &rest[..n_out];
            let x = post.last().unwrap();
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    bias[o]
                        + w[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Cache { pre, post }
    }

    /// Accumulates `scale * (d output / d params)^T grad_out` into `grad`.
    pub fn backward(&self, params: &[f64], cache: &Cache, grad_out: &[f64], scale: f64, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let layers: Vec<_> = self.layers().collect();
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        for l in (0..n_layers).rev() {
            let (start, n_in, n_out) = layers[l];
            if l + 1 != n_layers {
                for o in 0..n_out {
                    delta[o] *= self.activation.derivative(cache.pre[l][o], cache.post[l + 1][o]);
                }
            }
            let x = &cache.post[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[start + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &params[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                delta = prev;
            }
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
