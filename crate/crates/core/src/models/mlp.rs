//! Pooled-feature MLP classifier: `10 → 64 → 64 → m`, trained with Adam.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{logit_loss_grad, regression_head_grad, softplus, ClassDistribution, LossKind, OneHotLabel};
use super::nn::{relu, relu_backward, Adam, AdamConfig, Linear};
use crate::error::{Error, Result};
use crate::features::{col, FeatureMap};
use crate::geometry::bin_epsilon;

/// Pair-level summary statistics of a feature map.
pub const POOLED_DIM: usize = 10;
const MMDL_MAGIC: &[u8; 4] = b"MMDL";
const MMDL_VERSION: u32 = 3;

/// Rows this far above the low height quantile count as elevated (off the ground).
pub const ELEVATION_MARGIN: f64 = 0.4;
const GROUND_QUANTILE: f64 = 0.05;
/// Fewer elevated rows than this fall back to all rows.
const MIN_ELEVATED: usize = 4;

/// Linear-interpolated quantile of sorted values; 0 for an empty slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Pools a feature map into a fixed-length, row-order-invariant vector.
///
/// With the entropy gain `g = H_joint − H_sep` and `s = ln(S + 1e-6)`, the layout is:
/// mean, median and 0.9 quantile of `g`; mean and 0.9 quantile of `s`; mean, median and
/// 0.9 quantile of `g` over elevated rows; the elevated fraction; the mean of `s` over
/// elevated rows. A row is elevated when its height exceeds the 0.05 height quantile by
/// [`ELEVATION_MARGIN`], which separates the ground from structure without knowing the
/// sensor height.
pub fn pooled_input(fm: &FeatureMap) -> Vec<f64> {
    let n = fm.rows();
    let gain: Vec<f64> = (0..n).map(|i| fm.row(i)[col::H_JOINT] as f64 - fm.row(i)[col::H_SEP] as f64).collect();
    let log_s: Vec<f64> = (0..n).map(|i| ((fm.row(i)[col::SINKHORN] as f64).max(0.0) + 1e-6).ln()).collect();
    let height: Vec<f64> = fm.coords.chunks(3).map(|c| c[2] as f64).collect();
    let floor = quantile(&sorted(height.clone()), GROUND_QUANTILE);
    let elevated: Vec<usize> = (0..n).filter(|&i| height[i] > floor + ELEVATION_MARGIN).collect();
    let fraction = if n > 0 { elevated.len() as f64 / n as f64 } else { 0.0 };
    let subset: Vec<usize> = if elevated.len() >= MIN_ELEVATED { elevated } else { (0..n).collect() };

    let mut out = Vec::with_capacity(POOLED_DIM);
    let g = sorted(gain.clone());
    out.extend([mean(&g), quantile(&g, 0.5), quantile(&g, 0.9)]);
    let s = sorted(log_s.clone());
    out.extend([mean(&s), quantile(&s, 0.9)]);
    let ge = sorted(subset.iter().map(|&i| gain[i]).collect());
    out.extend([mean(&ge), quantile(&ge, 0.5), quantile(&ge, 0.9), fraction]);
    out.push(mean(&subset.iter().map(|&i| log_s[i]).collect::<Vec<_>>()));
    debug_assert_eq!(out.len(), POOLED_DIM);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// `m` logits with a softmax.
    Classifier,
    /// One softplus output estimating ε in meters; classes via the ε bins.
    RegressionEpsilon,
    /// One softplus output estimating the class index; classes by rounding.
    RegressionClass,
}

impl Head {
    fn code(self) -> u32 {
        match self {
            Head::Classifier => 0,
            Head::RegressionEpsilon => 1,
            Head::RegressionClass => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Head::Classifier),
            1 => Ok(Head::RegressionEpsilon),
            2 => Ok(Head::RegressionClass),
            _ => Err(Error::Format(format!("unknown head code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub head: Head,
    pub classes: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<Linear>,
}

struct Cache {
    x: Vec<f64>,
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl MlpParams {
    pub fn init(head: Head, classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outputs = if head == Head::Classifier { classes } else { 1 };
        let layers = vec![
            Linear::init(POOLED_DIM, hidden, &mut rng),
            Linear::init(hidden, hidden, &mut rng),
            Linear::init(hidden, outputs, &mut rng),
        ];
        Self { head, classes, input_mean: vec![0.0; POOLED_DIM], input_scale: vec![1.0; POOLED_DIM], layers }
    }

    fn forward(&self, raw: &[f64]) -> Cache {
        let x: Vec<f64> = raw.iter().zip(&self.input_mean).zip(&self.input_scale).map(|((v, m), s)| (v - m) / s).collect();
        let pre1 = self.layers[0].forward(&x);
        let h1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&h1);
        let h2 = relu(&pre2);
        let out = self.layers[2].forward(&h2);
        Cache { x, pre1, h1, pre2, h2, out }
    }

    fn backward(&self, c: &Cache, dout: &[f64], grads: &mut [Linear]) {
        let dh2 = self.layers[2].backward(&c.h2, dout, &mut grads[2]);
        let dpre2 = relu_backward(&c.pre2, &dh2);
        let dh1 = self.layers[1].backward(&c.h1, &dpre2, &mut grads[1]);
        let dpre1 = relu_backward(&c.pre1, &dh1);
        self.layers[0].backward(&c.x, &dpre1, &mut grads[0]);
    }

    /// Raw network outputs for a pooled input.
    pub fn outputs(&self, pooled: &[f64]) -> Vec<f64> {
        self.forward(pooled).out
    }

    /// Continuous estimate of a regression head.
    pub fn regression_value(&self, fm: &FeatureMap) -> Option<f64> {
        (self.head != Head::Classifier).then(|| softplus(self.outputs(&pooled_input(fm))[0]))
    }

    /// Class index for a set of raw outputs.
    pub fn class_of_outputs(&self, out: &[f64]) -> usize {
        match self.head {
            Head::Classifier => ClassDistribution::from_logits(out).argmax(),
            Head::RegressionEpsilon => bin_epsilon(softplus(out[0])).unwrap_or(0).min(self.classes - 1),
            Head::RegressionClass => (softplus(out[0]).round() as usize).min(self.classes - 1),
        }
    }

    pub fn predict_class(&self, fm: &FeatureMap) -> usize {
        self.class_of_outputs(&self.outputs(&pooled_input(fm)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MMDL_MAGIC)?;
        for v in [MMDL_VERSION, self.head.code(), self.classes as u32, self.layers.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.layers {
            w.write_all(&(l.n_in as u32).to_le_bytes())?;
            w.write_all(&(l.n_out as u32).to_le_bytes())?;
        }
        let values = self.input_mean.iter().chain(&self.input_scale).chain(self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)));
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MMDL_MAGIC {
            return Err(Error::Format("not an MMDL file".into()));
        }
        let u32s = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32s(&mut r)?;
        if version != MMDL_VERSION {
            return Err(Error::Format(format!("unsupported MMDL version {version}")));
        }
        let head = Head::from_code(u32s(&mut r)?)?;
        let classes = u32s(&mut r)? as usize;
        let n_layers = u32s(&mut r)? as usize;
        if n_layers != 3 || classes == 0 {
            return Err(Error::Format("unexpected MMDL architecture".into()));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            shapes.push((u32s(&mut r)? as usize, u32s(&mut r)? as usize));
        }
        if shapes[0].0 != POOLED_DIM || shapes.windows(2).any(|s| s[0].1 != s[1].0) {
            return Err(Error::Format("inconsistent MMDL layer shapes".into()));
        }
        let mut f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let input_mean = f64s(POOLED_DIM)?;
        let input_scale = f64s(POOLED_DIM)?;
        let mut layers = Vec::with_capacity(n_layers);
        for &(n_in, n_out) in &shapes {
            let w = f64s(n_in * n_out)?;
            let b = f64s(n_out)?;
            layers.push(Linear { n_in, n_out, w, b });
        }
        Ok(Self { head, classes, input_mean, input_scale, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Class distribution for a feature map. Regression heads yield a one-hot at their mapped class.
pub fn predict(model: &MlpParams, fm: &FeatureMap) -> ClassDistribution {
    let out = model.outputs(&pooled_input(fm));
    match model.head {
        Head::Classifier => ClassDistribution::from_logits(&out),
        _ => ClassDistribution::one_hot(&OneHotLabel { class_index: model.class_of_outputs(&out), m: model.classes }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// For [`LossKind::Regression`]: regress ε instead of the class index.
    pub regress_epsilon: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_step: 50,
            lr_gamma: 0.5,
            weight_decay: 1e-4,
            hidden: 64,
            seed: 0,
            loss: LossKind::Rbc,
            regress_epsilon: false,
        }
    }
}

/// One training example: a feature map and, for ε regression, its error in meters.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub map: &'a FeatureMap,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: MlpParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_accuracy));
    }
    s
}

struct Prepared {
    input: Vec<f64>,
    label: OneHotLabel,
    target: f64,
}

fn prepare(samples: &[Sample], classes: usize, head: Head) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let label = OneHotLabel::new(s.map.label as usize, classes)?;
            let target = match head {
                Head::RegressionEpsilon => {
                    s.epsilon.ok_or_else(|| Error::InvalidParams("ε regression needs per-sample ε".into()))?
                }
                _ => s.map.label as f64,
            };
            Ok(Prepared { input: pooled_input(s.map), label, target })
        })
        .collect()
}

fn sample_loss(model: &MlpParams, kind: LossKind, p: &Prepared, cache: &Cache) -> (f64, Vec<f64>) {
    match model.head {
        Head::Classifier => logit_loss_grad(kind, &p.label, &cache.out),
        _ => {
            let (l, g) = regression_head_grad(p.target, cache.out[0]);
            (l, vec![g])
        }
    }
}

fn evaluate(model: &MlpParams, kind: LossKind, data: &[Prepared]) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for p in data {
        let c = model.forward(&p.input);
        loss += sample_loss(model, kind, p, &c).0;
        correct += (model.class_of_outputs(&c.out) == p.label.class_index) as usize;
    }
    (loss / data.len() as f64, correct as f64 / data.len() as f64)
}

/// Trains the MLP on `train`, selecting the checkpoint with the lowest loss on `val`
/// (or on the training loss when `val` is empty). Single-threaded and bit-deterministic.
pub fn train_mlp(train: &[Sample], val: &[Sample], classes: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidParams("empty training set".into()));
    }
    if classes < 2 || config.batch_size == 0 || config.epochs == 0 || config.lr_step == 0 {
        return Err(Error::InvalidParams("invalid training configuration".into()));
    }
    let head = match (config.loss, config.regress_epsilon) {
        (LossKind::Regression, true) => Head::RegressionEpsilon,
        (LossKind::Regression, false) => Head::RegressionClass,
        _ => Head::Classifier,
    };
    let train_data = prepare(train, classes, head)?;
    let val_data = prepare(val, classes, head)?;

    let mut model = MlpParams::init(head, classes, config.hidden, config.seed);
    let n = train_data.len() as f64;
    for j in 0..POOLED_DIM {
        let mean = train_data.iter().map(|p| p.input[j]).sum::<f64>() / n;
        let var = train_data.iter().map(|p| (p.input[j] - mean).powi(2)).sum::<f64>() / n;
        model.input_mean[j] = mean;
        model.input_scale[j] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
    }

    let mut adam = Adam::new(&model.layers, AdamConfig { weight_decay: config.weight_decay, ..Default::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpParams)> = None;

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate * config.lr_gamma.powi(((epoch - 1) / config.lr_step) as i32);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Linear> = model.layers.iter().map(|l| Linear::zeros(l.n_in, l.n_out)).collect();
            for &i in batch {
                let p = &train_data[i];
                let cache = model.forward(&p.input);
                let (loss, dout) = sample_loss(&model, config.loss, p, &cache);
                total += loss;
                model.backward(&cache, &dout, &mut grads);
            }
            grads.iter_mut().for_each(|g| g.scale(1.0 / batch.len() as f64));
            adam.step(&mut model.layers, &grads, lr);
        }
        let train_loss = total / n;
        if !train_loss.is_finite() || !model.layers.iter().all(Linear::is_finite) {
            return Err(Error::TrainingDiverged { epoch });
        }
        let (val_loss, val_accuracy) = if val_data.is_empty() {
            evaluate(&model, config.loss, &train_data)
        } else {
            evaluate(&model, config.loss, &val_data)
        };
        history.push(EpochRecord { epoch, train_loss, val_loss, val_accuracy });
        if best.as_ref().map_or(true, |b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, best_epoch, history })
}
