//! Small dense networks for the policy and value heads.
//!
//! Two hidden rectifier layers (256, 128 units) with a linear output, plus
//! manual backprop and an Adam optimizer. Self-contained on purpose so the
//! whole training path stays auditable.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Default hidden layer widths.
pub const HIDDEN: [usize; 2] = [256, 128];

/// A fully-connected network with ReLU hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Layer sizes, input first.
    sizes: Vec<usize>,
    /// Row-major weight matrices, one per layer transition.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradients matching [`Mlp`] layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= c;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= c;
            }
        }
    }
}

/// Activations cached by a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: `acts[0]` is the network input, `acts.last()` the output.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values for the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("forward cache always has layers")
    }
}

impl Mlp {
    /// He-initialized network `input -> 256 -> 128 -> output`.
    pub fn new(input: usize, output: usize, seed: u64) -> Self {
        Self::with_hidden(input, &HIDDEN, output, seed)
    }

    /// Network with explicit hidden widths (used by tests that need a tiny net).
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let fan_in = sizes[l];
            let scale = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..sizes[l] * sizes[l + 1])
                .map(|_| normal_sample(&mut rng) * scale)
                .collect();
            weights.push(w);
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Self {
            sizes,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Forward pass caching everything backprop needs.
    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.sizes[0], "input dim mismatch");
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        for l in 0..layers {
            let n_in = self.sizes[l];
            let x = &acts[l];
            let mut z = self.biases[l].clone();
            for (o, z_o) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                *z_o += acc;
            }
            let is_last = l == layers - 1;
            let a = if is_last {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        ForwardCache { acts, pre }
    }

    /// Convenience forward returning only the output vector.
    pub fn infer(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).output().to_vec()
    }

    /// Backprop of `d loss / d output` through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> MlpGrads {
        let layers = self.sizes.len() - 1;
        assert_eq!(grad_out.len(), self.output_dim());
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l != layers - 1 {
                // ReLU mask for hidden layers.
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.acts[l];
            for (o, &d) in delta.iter().enumerate().take(n_out) {
                if d != 0.0 {
                    let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                grads.biases[l][o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate().take(n_out) {
                    if d != 0.0 {
                        let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                }
                delta = prev;
            }
        }
        grads
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flattened parameters, weights first then biases, layer by layer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Restores parameters from [`Mlp::flat_params`] layout.
    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "param count mismatch");
        let mut at = 0;
        for l in 0..self.weights.len() {
            let wn = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
    }

    fn grad_flat(grads: &MlpGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..grads.weights.len() {
            out.extend_from_slice(&grads.weights[l]);
            out.extend_from_slice(&grads.biases[l]);
        }
        out
    }
}

fn normal_sample<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One update step in place over `net` given accumulated gradients.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let g = Mlp::grad_flat(grads);
        let mut p = net.flat_params();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        net.set_flat_params(&p);
    }
}

/// Softmax with `-inf`-style masking: slots at `live..` get probability zero.
pub fn masked_softmax(logits: &[f64], live: usize) -> Vec<f64> {
    assert!(live >= 1 && live <= logits.len());
    let m = logits[..live].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for i in 0..live {
        let e = (logits[i] - m).exp();
        out[i] = e;
        sum += e;
    }
    for o in out[..live].iter_mut() {
        *o /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn forward_shapes_and_determinism() {
        let net = Mlp::new(10, 4, 7);
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let a = net.infer(&x);
        let b = net.infer(&x);
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let net2 = Mlp::new(10, 4, 7);
        assert_eq!(net2.infer(&x), a);
    }

    #[test]
    fn flat_param_roundtrip() {
        let mut net = Mlp::with_hidden(3, &[5, 4], 2, 1);
        let flat = net.flat_params();
        let mut changed = flat.clone();
        changed[0] += 1.0;
        net.set_flat_params(&changed);
        assert_eq!(net.flat_params(), changed);
        net.set_flat_params(&flat);
        assert_eq!(net.flat_params(), flat);
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        // Squared-error loss on a small net; check 10 random coordinates.
        let mut net = Mlp::with_hidden(6, &[16, 8], 3, 42);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let target = [0.3, -0.2, 0.9];
        let loss_of = |net: &Mlp| -> f64 {
            let y = net.infer(&x);
            y.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let cache = net.forward(&x);
        let grad_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&target)
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        let grads = net.backward(&cache, &grad_out);
        let flat_grads = Mlp::grad_flat(&grads);

        let flat = net.flat_params();
        let n = flat.len();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..10 {
            let i = rng.random_range(0..n);
            let mut plus = flat.clone();
            plus[i] += h;
            net.set_flat_params(&plus);
            let lp = loss_of(&net);
            let mut minus = flat.clone();
            minus[i] -= h;
            net.set_flat_params(&minus);
            let lm = loss_of(&net);
            net.set_flat_params(&flat);
            let fd = (lp - lm) / (2.0 * h);
            let an = flat_grads[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "coordinate {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut net = Mlp::with_hidden(4, &[8, 8], 2, 3);
        let before = net.flat_params();
        let mut opt = Adam::new(0.0, net.param_count());
        let cache = net.forward(&[0.1, 0.2, 0.3, 0.4]);
        let grads = net.backward(&cache, &[1.0, -1.0]);
        opt.step(&mut net, &grads);
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn masked_softmax_zeroes_padding() {
        let p = masked_softmax(&[1.0, 2.0, 3.0, 100.0], 3);
        assert_eq!(p[3], 0.0);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }
}
