//! Classification and regression losses with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;
const DIST_TOL: f64 = 1e-9;

/// Probability vector over `m` ordered classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::InvalidParams(format!("not a probability vector (sum {sum})")));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self { probs: softmax(logits) }
    }

    pub fn one_hot(label: &OneHotLabel) -> Self {
        let mut probs = vec![0.0; label.m];
        probs[label.class_index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        self.probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b }).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    pub class_index: usize,
    pub m: usize,
}

impl OneHotLabel {
    pub fn new(class_index: usize, m: usize) -> Result<Self> {
        if class_index >= m {
            return Err(Error::ClassIndexOutOfRange { index: class_index, count: m });
        }
        Ok(Self { class_index, m })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `−ln p[y]`, with the probability floored at 1e-12.
pub fn cross_entropy(y: &OneHotLabel, p: &ClassDistribution) -> f64 {
    -p.probs[y.class_index].max(PROB_FLOOR).ln()
}

/// One-dimensional Wasserstein distance between the label and prediction CDFs.
pub fn wasserstein1(y: &OneHotLabel, p: &ClassDistribution) -> f64 {
    let mut cdf_p = 0.0;
    let mut total = 0.0;
    for (k, &pk) in p.probs.iter().enumerate() {
        cdf_p += pk;
        let cdf_y = if k >= y.class_index { 1.0 } else { 0.0 };
        total += (cdf_y - cdf_p).abs();
    }
    total
}

/// Equal mixture of cross-entropy and 1-D Wasserstein loss.
pub fn combined_loss(y: &OneHotLabel, p: &ClassDistribution) -> f64 {
    0.5 * cross_entropy(y, p) + 0.5 * wasserstein1(y, p)
}

fn batch_mean(labels: &[OneHotLabel], preds: &[ClassDistribution], loss: fn(&OneHotLabel, &ClassDistribution) -> f64) -> Result<f64> {
    if labels.len() != preds.len() {
        return Err(Error::LengthMismatch(labels.len(), preds.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(labels.iter().zip(preds).map(|(y, p)| loss(y, p)).sum::<f64>() / labels.len() as f64)
}

pub fn batch_cross_entropy(labels: &[OneHotLabel], preds: &[ClassDistribution]) -> Result<f64> {
    batch_mean(labels, preds, cross_entropy)
}

pub fn batch_wasserstein1(labels: &[OneHotLabel], preds: &[ClassDistribution]) -> Result<f64> {
    batch_mean(labels, preds, wasserstein1)
}

pub fn batch_combined_loss(labels: &[OneHotLabel], preds: &[ClassDistribution]) -> Result<f64> {
    batch_mean(labels, preds, combined_loss)
}

/// Training objective selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Regression-by-classification: combined CE + Wasserstein.
    #[serde(rename = "rbc")]
    Rbc,
    #[serde(rename = "ce-only")]
    CeOnly,
    /// Softplus head with squared error.
    #[serde(rename = "regression")]
    Regression,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbc" => Ok(LossKind::Rbc),
            "ce-only" => Ok(LossKind::CeOnly),
            "regression" => Ok(LossKind::Regression),
            other => Err(Error::InvalidParams(format!("unknown loss {other:?}"))),
        }
    }
}

/// Classification loss and its gradient with respect to the logits.
pub fn logit_loss_grad(kind: LossKind, y: &OneHotLabel, logits: &[f64]) -> (f64, Vec<f64>) {
    let p = ClassDistribution::from_logits(logits);
    let probs = p.probs();
    let mut ce_grad: Vec<f64> = probs.to_vec();
    ce_grad[y.class_index] -= 1.0;
    match kind {
        LossKind::CeOnly => (cross_entropy(y, &p), ce_grad),
        LossKind::Rbc | LossKind::Regression => {
            // dW1/dp_l = Σ_{k ≥ l} sign(P_k − Y_k); the final CDF term is identically zero.
            let m = probs.len();
            let mut signs = vec![0.0; m];
            let mut cdf_p = 0.0;
            for k in 0..m.saturating_sub(1) {
                cdf_p += probs[k];
                let cdf_y = if k >= y.class_index { 1.0 } else { 0.0 };
                signs[k] = (cdf_p - cdf_y).signum() * ((cdf_p - cdf_y) != 0.0) as u8 as f64;
            }
            let mut dp = vec![0.0; m];
            let mut acc = 0.0;
            for l in (0..m).rev() {
                acc += signs[l];
                dp[l] = acc;
            }
            let mean: f64 = dp.iter().zip(probs).map(|(g, p)| g * p).sum();
            let grad = (0..m).map(|i| 0.5 * ce_grad[i] + 0.5 * probs[i] * (dp[i] - mean)).collect();
            (combined_loss(y, &p), grad)
        }
    }
}

/// `ln(1 + eˣ)`, computed without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// `(softplus(logit) − target)²`.
pub fn regression_head_loss(target: f64, logit: f64) -> f64 {
    (softplus(logit) - target).powi(2)
}

/// Loss and derivative with respect to the logit.
pub fn regression_head_grad(target: f64, logit: f64) -> (f64, f64) {
    let r = softplus(logit) - target;
    (r * r, 2.0 * r * sigmoid(logit))
}
