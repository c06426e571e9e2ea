//! A single point-transformer (vector self-attention) layer with analytic gradients.
//!
//! For point `i` with neighbors `j ∈ N(i)` (its `k_nn` nearest, itself included):
//!
//! ```text
//! δ_ij = θ(p_i − p_j)
//! a_ij = γ(φ(x_i) − ψ(x_j) + δ_ij)
//! y_i  = Σ_j softmax_j(a_ij) ∘ (α(x_j) + δ_ij)
//! ```
//!
//! where the softmax runs over neighbors independently for every channel.

use rand::Rng;

use super::nn::{relu, relu_backward, Linear};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::spatial::KdTree;

#[derive(Debug, Clone, PartialEq)]
pub struct PTLayerParams {
    pub phi: Linear,
    pub psi: Linear,
    pub alpha: Linear,
    /// Position encoding `3 → d_attn → d_attn`.
    pub theta: [Linear; 2],
    /// Attention MLP `d_attn → d_attn → d_attn`.
    pub gamma: [Linear; 2],
    pub k_nn: usize,
}

impl PTLayerParams {
    pub fn zeros(d_in: usize, d_attn: usize, k_nn: usize) -> Self {
        Self {
            phi: Linear::zeros(d_in, d_attn),
            psi: Linear::zeros(d_in, d_attn),
            alpha: Linear::zeros(d_in, d_attn),
            theta: [Linear::zeros(3, d_attn), Linear::zeros(d_attn, d_attn)],
            gamma: [Linear::zeros(d_attn, d_attn), Linear::zeros(d_attn, d_attn)],
            k_nn,
        }
    }

    /// Every weight and bias drawn uniformly from `±scale`.
    pub fn random(d_in: usize, d_attn: usize, k_nn: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d_in, d_attn, k_nn);
        for l in p.linears_mut() {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        p
    }

    pub fn d_in(&self) -> usize {
        self.phi.n_in
    }

    pub fn d_attn(&self) -> usize {
        self.phi.n_out
    }

    pub fn linears(&self) -> [&Linear; 7] {
        [&self.phi, &self.psi, &self.alpha, &self.theta[0], &self.theta[1], &self.gamma[0], &self.gamma[1]]
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 7] {
        let [t0, t1] = &mut self.theta;
        let [g0, g1] = &mut self.gamma;
        [&mut self.phi, &mut self.psi, &mut self.alpha, t0, t1, g0, g1]
    }

    pub fn validate(&self) -> Result<()> {
        let (d_in, d) = (self.d_in(), self.d_attn());
        let ok = self.k_nn >= 1
            && self.psi.n_in == d_in
            && self.alpha.n_in == d_in
            && [&self.psi, &self.alpha].iter().all(|l| l.n_out == d)
            && self.theta[0].n_in == 3
            && self.theta[0].n_out == self.theta[1].n_in
            && self.theta[1].n_out == d
            && self.gamma[0].n_in == d
            && self.gamma[0].n_out == self.gamma[1].n_in
            && self.gamma[1].n_out == d;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams("inconsistent point-transformer dimensions".into()))
        }
    }
}

struct MlpCache {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn mlp2(layers: &[Linear; 2], x: &[f64]) -> MlpCache {
    let pre = layers[0].forward(x);
    let hidden = relu(&pre);
    let out = layers[1].forward(&hidden);
    MlpCache { pre, hidden, out }
}

fn mlp2_backward(layers: &[Linear; 2], x: &[f64], c: &MlpCache, dout: &[f64], grads: &mut [Linear; 2]) -> Vec<f64> {
    let [g0, g1] = grads;
    let dh = layers[1].backward(&c.hidden, dout, g1);
    let dpre = relu_backward(&c.pre, &dh);
    layers[0].backward(x, &dpre, g0)
}

/// Neighbor lists: the `k` nearest of each point, self first on exact ties.
pub fn knn_graph(coords: &[Point3], k: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(coords);
    coords.iter().map(|p| tree.k_nearest(p, k).into_iter().map(|(j, _)| j).collect()).collect()
}

struct Pair {
    j: usize,
    dp: Vec<f64>,
    delta: MlpCache,
    u: Vec<f64>,
    attn: MlpCache,
}

struct Forward {
    v: Vec<Vec<f64>>,
    pairs: Vec<Vec<Pair>>,
    weights: Vec<Vec<Vec<f64>>>,
    out: Vec<Vec<f64>>,
}

fn run_forward(features: &[Vec<f64>], coords: &[Point3], params: &PTLayerParams) -> Result<Forward> {
    params.validate()?;
    let n = features.len();
    if coords.len() != n {
        return Err(Error::LengthMismatch(n, coords.len()));
    }
    if n < params.k_nn {
        return Err(Error::TooFewPoints { needed: params.k_nn, got: n });
    }
    if features.iter().any(|f| f.len() != params.d_in()) {
        return Err(Error::InvalidParams("feature width differs from d_in".into()));
    }
    let d = params.d_attn();
    let q: Vec<Vec<f64>> = features.iter().map(|x| params.phi.forward(x)).collect();
    let k: Vec<Vec<f64>> = features.iter().map(|x| params.psi.forward(x)).collect();
    let v: Vec<Vec<f64>> = features.iter().map(|x| params.alpha.forward(x)).collect();
    let graph = knn_graph(coords, params.k_nn);
    let mut pairs = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<Pair> = Vec::with_capacity(params.k_nn);
        for &j in &graph[i] {
            let dp = (coords[i] - coords[j]).as_slice().to_vec();
            let delta = mlp2(&params.theta, &dp);
            let u: Vec<f64> = (0..d).map(|c| q[i][c] - k[j][c] + delta.out[c]).collect();
            let attn = mlp2(&params.gamma, &u);
            row.push(Pair { j, dp, delta, u, attn });
        }
        let mut w = vec![vec![0.0; d]; row.len()];
        let mut y = vec![0.0; d];
        for c in 0..d {
            let max = row.iter().map(|p| p.attn.out[c]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|p| (p.attn.out[c] - max).exp()).sum();
            for (t, p) in row.iter().enumerate() {
                w[t][c] = (p.attn.out[c] - max).exp() / sum;
                y[c] += w[t][c] * (v[p.j][c] + p.delta.out[c]);
            }
        }
        pairs.push(row);
        weights.push(w);
        out.push(y);
    }
    Ok(Forward { v, pairs, weights, out })
}

/// Layer output, one `d_attn` vector per point.
pub fn pt_layer_forward(features: &[Vec<f64>], coords: &[Point3], params: &PTLayerParams) -> Result<Vec<Vec<f64>>> {
    Ok(run_forward(features, coords, params)?.out)
}

/// Output and parameter gradients of `Σ_i ⟨upstream_i, y_i⟩`.
pub fn pt_layer_backward(
    features: &[Vec<f64>],
    coords: &[Point3],
    params: &PTLayerParams,
    upstream: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, PTLayerParams)> {
    let f = run_forward(features, coords, params)?;
    if upstream.len() != features.len() {
        return Err(Error::LengthMismatch(features.len(), upstream.len()));
    }
    let d = params.d_attn();
    let n = features.len();
    let mut grads = PTLayerParams::zeros(params.d_in(), d, params.k_nn);
    let mut dq = vec![vec![0.0; d]; n];
    let mut dk = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    for i in 0..n {
        let g = &upstream[i];
        let row = &f.pairs[i];
        let w = &f.weights[i];
        // dL/dw_ij[c] and the softmax Jacobian, channel by channel.
        let dw: Vec<Vec<f64>> = row.iter().map(|p| (0..d).map(|c| g[c] * (f.v[p.j][c] + p.delta.out[c])).collect()).collect();
        let mut weighted = vec![0.0; d];
        for c in 0..d {
            weighted[c] = (0..row.len()).map(|t| w[t][c] * dw[t][c]).sum();
        }
        for (t, p) in row.iter().enumerate() {
            let da: Vec<f64> = (0..d).map(|c| w[t][c] * (dw[t][c] - weighted[c])).collect();
            let du = mlp2_backward(&params.gamma, &p.u, &p.attn, &da, &mut grads.gamma);
            let mut ddelta: Vec<f64> = (0..d).map(|c| w[t][c] * g[c]).collect();
            for c in 0..d {
                dv[p.j][c] += ddelta[c];
                dq[i][c] += du[c];
                dk[p.j][c] -= du[c];
                ddelta[c] += du[c];
            }
            mlp2_backward(&params.theta, &p.dp, &p.delta, &ddelta, &mut grads.theta);
        }
    }
    for i in 0..n {
        params.phi.backward(&features[i], &dq[i], &mut grads.phi);
        params.psi.backward(&features[i], &dk[i], &mut grads.psi);
        params.alpha.backward(&features[i], &dv[i], &mut grads.alpha);
    }
    Ok((f.out, grads))
}
