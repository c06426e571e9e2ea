//! Entropic optimal transport between weighted point sets, solved in the log domain.
//!
//! The cost is `c(x, y) = ½‖x − y‖²`. Potentials are warm-started by annealing the
//! regularization from the squared diameter of the problem down to the target weight,
//! one update per stage, after which updates continue at the target weight until the
//! largest dual change falls below the tolerance. Each update averages both potentials
//! with their log-domain Sinkhorn images, so identical measures give identical iterates
//! in the cross and self problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

const MEASURE_TOL: f64 = 1e-9;
const ANNEAL_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Regularization weight ε (m²).
    pub epsilon_reg: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest dual-potential change.
    pub tolerance: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { epsilon_reg: 0.01, max_iters: 200, tolerance: 1e-6 }
    }
}

/// Discrete probability measure on 3-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
}

impl Measure {
    pub fn uniform(points: Vec<Point3>) -> Self {
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self { points, weights }
    }

    pub fn new(points: Vec<Point3>, weights: Vec<f64>) -> Result<Self> {
        let m = Self { points, weights };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.points.len() != self.weights.len() {
            return Err(Error::LengthMismatch(self.points.len(), self.weights.len()));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.points.is_empty() || self.weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > MEASURE_TOL {
            return Err(Error::BadMeasure(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOutput {
    /// Entropic transport cost `W_ε`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropy-regularized transport cost `W_ε(a, b)` including the KL term against `a ⊗ b`.
pub fn sinkhorn_distance(a: &Measure, b: &Measure, params: &SinkhornParams) -> Result<SinkhornOutput> {
    a.validate()?;
    b.validate()?;
    if !(params.epsilon_reg > 0.0) || params.max_iters == 0 {
        return Err(Error::InvalidParams(format!("bad Sinkhorn parameters {params:?}")));
    }
    let (n, m) = (a.points.len(), b.points.len());
    let cost: Vec<f64> = a
        .points
        .iter()
        .flat_map(|x| b.points.iter().map(move |y| 0.5 * (x - y).norm_squared()))
        .collect();
    let log_a: Vec<f64> = a.weights.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.weights.iter().map(|w| w.ln()).collect();
    let max_cost = cost.iter().copied().fold(0.0, f64::max);

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    // One averaged update of both potentials from the previous pair; returns the largest change.
    let mut step = |f: &mut Vec<f64>, g: &mut Vec<f64>, eps: f64| -> f64 {
        let next_f: Vec<f64> = (0..n)
            .map(|i| {
                let row = &cost[i * m..(i + 1) * m];
                for j in 0..m {
                    buf[j] = log_b[j] + (g[j] - row[j]) / eps;
                }
                let t = -eps * log_sum_exp(&buf[..m]);
                0.5 * (f[i] + t)
            })
            .collect();
        let next_g: Vec<f64> = (0..m)
            .map(|j| {
                for i in 0..n {
                    buf[i] = log_a[i] + (f[i] - cost[i * m + j]) / eps;
                }
                let t = -eps * log_sum_exp(&buf[..n]);
                0.5 * (g[j] + t)
            })
            .collect();
        let change = next_f.iter().zip(f.iter()).chain(next_g.iter().zip(g.iter())).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        *f = next_f;
        *g = next_g;
        change
    };

    let target = params.epsilon_reg;
    let mut eps = max_cost.max(target);
    let mut iterations = 0;
    while eps > target && iterations < params.max_iters {
        step(&mut f, &mut g, eps);
        iterations += 1;
        eps = (eps * ANNEAL_RATIO).max(target);
    }
    let mut converged = false;
    while iterations < params.max_iters {
        iterations += 1;
        if step(&mut f, &mut g, target) < params.tolerance {
            converged = true;
            break;
        }
    }

    // Dual objective; it equals the primal cost with the entropic term once the plan's
    // marginals match, and is insensitive to the slow near-flat potential directions.
    let value = a.weights.iter().zip(&f).map(|(w, f)| w * f).sum::<f64>()
        + b.weights.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>();
    Ok(SinkhornOutput { value, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    /// `max(raw, 0)`.
    pub value: f64,
    /// `W_ε(a,b) − ½W_ε(a,a) − ½W_ε(b,b)` before clamping.
    pub raw: f64,
    pub converged: bool,
}

/// Debiased Sinkhorn divergence.
pub fn sinkhorn_divergence(a: &Measure, b: &Measure, params: &SinkhornParams) -> Result<Divergence> {
    let ab = sinkhorn_distance(a, b, params)?;
    let aa = self_transport(a, params)?;
    let bb = self_transport(b, params)?;
    let raw = ab.value - 0.5 * aa.value - 0.5 * bb.value;
    Ok(Divergence { value: raw.max(0.0), raw, converged: ab.converged && aa.converged && bb.converged })
}

/// `W_ε(a, a)` through the symmetric fixed point `f = ½(f + T(f))`, sharing one potential
/// between both marginals.
pub fn self_transport(a: &Measure, params: &SinkhornParams) -> Result<SinkhornOutput> {
    a.validate()?;
    if !(params.epsilon_reg > 0.0) || params.max_iters == 0 {
        return Err(Error::InvalidParams(format!("bad Sinkhorn parameters {params:?}")));
    }
    let n = a.points.len();
    let cost: Vec<f64> = a
        .points
        .iter()
        .flat_map(|x| a.points.iter().map(move |y| 0.5 * (x - y).norm_squared()))
        .collect();
    let log_a: Vec<f64> = a.weights.iter().map(|w| w.ln()).collect();
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut f = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut step = |f: &mut Vec<f64>, eps: f64| -> f64 {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let row = &cost[i * n..(i + 1) * n];
                for j in 0..n {
                    buf[j] = log_a[j] + (f[j] - row[j]) / eps;
                }
                let t = -eps * log_sum_exp(&buf);
                0.5 * (f[i] + t)
            })
            .collect();
        let change = next.iter().zip(f.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        *f = next;
        change
    };
    let target = params.epsilon_reg;
    let mut eps = max_cost.max(target);
    let mut iterations = 0;
    while eps > target && iterations < params.max_iters {
        step(&mut f, eps);
        iterations += 1;
        eps = (eps * ANNEAL_RATIO).max(target);
    }
    let mut converged = false;
    while iterations < params.max_iters {
        iterations += 1;
        if step(&mut f, target) < params.tolerance {
            converged = true;
            break;
        }
    }
    let value = 2.0 * a.weights.iter().zip(&f).map(|(w, f)| w * f).sum::<f64>();
    Ok(SinkhornOutput { value, iterations, converged })
}

/// Exact transport cost between uniform measures of equal size, by enumerating permutations.
pub fn uniform_assignment_cost(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| 0.5 * (a[i] - b[j]).norm_squared()).sum();
        best = best.min(c / n as f64);
    });
    Ok(best)
}

fn permute(perm: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}
