//! Logistic regression on the aggregate entropies `(H_joint, H_sep)`.

use serde::{Deserialize, Serialize};

use super::losses::sigmoid;
use crate::error::{Error, Result};

const L2: f64 = 1e-4;
const STEP: f64 = 0.5;
const ITERS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoralModel {
    /// Weights on `(H_joint, H_sep)`.
    pub weights: [f64; 2],
    pub bias: f64,
}

impl CoralModel {
    /// Probability that the pair is misaligned.
    pub fn predict(&self, x: [f64; 2]) -> f64 {
        sigmoid(self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias)
    }
}

/// Maximum-likelihood fit by full-batch gradient descent on standardized inputs, with an
/// L2 penalty on the weights. `labels[i]` is `true` for misaligned pairs.
pub fn coral_fit(features: &[[f64; 2]], labels: &[bool]) -> Result<CoralModel> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch(features.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    let n = features.len() as f64;
    let mut mean = [0.0; 2];
    let mut scale = [1.0; 2];
    for c in 0..2 {
        mean[c] = features.iter().map(|x| x[c]).sum::<f64>() / n;
        let sd = (features.iter().map(|x| (x[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 {
            scale[c] = sd;
        }
    }
    let z: Vec<[f64; 2]> = features.iter().map(|x| [(x[0] - mean[0]) / scale[0], (x[1] - mean[1]) / scale[1]]).collect();
    let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
    for _ in 0..ITERS {
        let mut gw = [L2 * w[0], L2 * w[1]];
        let mut gb = 0.0;
        for (x, &y) in z.iter().zip(labels) {
            let r = sigmoid(w[0] * x[0] + w[1] * x[1] + b) - y as u8 as f64;
            gw[0] += r * x[0] / n;
            gw[1] += r * x[1] / n;
            gb += r / n;
        }
        w[0] -= STEP * gw[0];
        w[1] -= STEP * gw[1];
        b -= STEP * gb;
    }
    let weights = [w[0] / scale[0], w[1] / scale[1]];
    let bias = b - weights[0] * mean[0] - weights[1] * mean[1];
    Ok(CoralModel { weights, bias })
}

pub fn coral_predict(model: &CoralModel, x: [f64; 2]) -> f64 {
    model.predict(x)
}
