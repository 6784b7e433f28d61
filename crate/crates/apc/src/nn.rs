//! Minimal dense network with manual gradients.
//!
//! Everything downstream (actor, critic, harm regressor) is a small MLP
//! with tanh hidden layers and a linear head, trained in f64 so analytic
//! gradients can be checked against central finite differences exactly.
//! Parameters live in one flat vector; layer l occupies
//! `[w(out*in), b(out)]` slices in order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept by a forward pass for the backward pass.
pub struct Cache {
    /// Input plus post-activation output of every layer (len = #layers + 1).
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform init scaled by 1/sqrt(fan_in); biases start at zero.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut params = vec![0.0; param_count(dims)];
        let mut off = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in params[off..off + fan_in * fan_out].iter_mut() {
                *p = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
            off += fan_in * fan_out + fan_out;
        }
        Mlp {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn from_params(dims: Vec<usize>, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), param_count(&dims));
        Mlp { dims, params }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = self.forward_cache(x);
        cache.acts.pop().expect("non-empty")
    }

    pub fn forward_cache(&self, x: &[f64]) -> Cache {
        assert_eq!(x.len(), self.dims[0], "input dim mismatch");
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let biases = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let prev = &acts[l];
            let mut out = vec![0.0; n_out];
            for (o, out_o) in out.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = biases[o];
                for (wi, xi) in row.iter().zip(prev.iter()) {
                    z += wi * xi;
                }
                *out_o = if l + 1 < layers { z.tanh() } else { z };
            }
            acts.push(out);
        }
        Cache { acts }
    }

    /// Back-propagate `dout` (dLoss/dOutput) through the network,
    /// accumulating dLoss/dParams into `grad` (same layout as params).
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.dims.len() - 1;
        // Offsets of each layer's parameter block.
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let base = offsets[l];
            let weights = &self.params[base..base + n_in * n_out];
            let prev = &cache.acts[l];
            // Grad wrt this layer's weights and biases.
            for o in 0..n_out {
                let d = delta[o];
                let grow = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, xi) in grow.iter_mut().zip(prev.iter()) {
                    *g += d * xi;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer through the tanh.
            let mut prev_delta = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (pd, wi) in prev_delta.iter_mut().zip(row.iter()) {
                    *pd += d * wi;
                }
            }
            for (pd, a) in prev_delta.iter_mut().zip(prev.iter()) {
                *pd *= 1.0 - a * a;
            }
            delta = prev_delta;
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Apply one descent step along `grad`. Returns false (and leaves the
    /// parameters untouched) if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        if grad.iter().any(|g| !g.is_finite()) {
            return false;
        }
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / b1c;
            let vhat = *v / b2c;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        true
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn fd_grad(mlp: &Mlp, loss: impl Fn(&Mlp) -> f64, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; mlp.num_params()];
        for i in 0..mlp.num_params() {
            let mut plus = mlp.clone();
            plus.params_mut()[i] += h;
            let mut minus = mlp.clone();
            minus.params_mut()[i] -= h;
            g[i] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(11, Domain::Init, 0);
        let mlp = Mlp::new(&[4, 8, 3], &mut rng);
        let x = vec![0.3, -0.7, 1.1, 0.05];
        // Loss: squared norm of the output.
        let loss = |m: &Mlp| m.forward(&x).iter().map(|o| o * o).sum::<f64>();
        let cache = mlp.forward_cache(&x);
        let dout: Vec<f64> = cache.output().iter().map(|o| 2.0 * o).collect();
        let mut grad = vec![0.0; mlp.num_params()];
        mlp.backward(&cache, &dout, &mut grad);
        let fd = fd_grad(&mlp, loss, 1e-6);
        for (a, n) in grad.iter().zip(fd.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!(
                ((a - n) / denom).abs() < 1e-4,
                "analytic {a} vs fd {n}"
            );
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut params = vec![5.0, -3.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let grad: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            assert!(opt.step(&mut params, &grad));
        }
        assert!(params.iter().all(|p| p.abs() < 1e-2));
    }

    #[test]
    fn adam_skips_non_finite() {
        let mut params = vec![1.0];
        let mut opt = Adam::new(0.1, 1);
        assert!(!opt.step(&mut params, &[f64::NAN]));
        assert_eq!(params[0], 1.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }
}
