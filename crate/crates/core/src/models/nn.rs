//! Dense layers with manual backprop, and Adam with decoupled weight decay.

use rand::Rng;

/// Affine map `y = W x + b` with row-major `W` (`n_out × n_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    /// Weights uniform in `±√(6 / n_in)`, biases zero.
    pub fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / n_in as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = o * self.n_in;
            for i in 0..self.n_in {
                grad.w[row + i] += g * x[i];
                dx[i] += g * self.w[row + i];
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn scale(&mut self, s: f64) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Masks `dy` by the sign of the pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Bias-corrected Adam over a list of layers. Weight decay acts on weights directly,
/// outside the moment estimates, and never on biases.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Linear>,
    v: Vec<Linear>,
    t: i32,
}

impl Adam {
    pub fn new(layers: &[Linear], config: AdamConfig) -> Self {
        let zeros: Vec<Linear> = layers.iter().map(|l| Linear::zeros(l.n_in, l.n_out)).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, layers: &mut [Linear], grads: &[Linear], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((layer, g), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: f64| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * p[i]);
                }
            };
            update(&mut layer.w, &g.w, &mut m.w, &mut v.w, weight_decay);
            update(&mut layer.b, &g.b, &mut m.b, &mut v.b, 0.0);
        }
    }
}
