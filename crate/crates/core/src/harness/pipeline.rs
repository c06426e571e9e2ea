//! End-to-end workflows behind the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::dataset::{load_pair, DatasetConfig, DatasetManifest, ManifestEntry, Split};
use super::icp::{evaluate_registration, IcpParams};
use super::parallel_map;
use crate::error::{Error, Result};
use crate::features::sinkhorn::{sinkhorn_divergence, Measure, SinkhornParams};
use crate::features::{coral_features, extract_features, FeatureConfig, FeatureMap, SinkhornMode};
use crate::geometry::Scheme;
use crate::io::{ply_string, write_atomic};
use crate::metrics::{
    binary_accuracy, chamfer, correction_selection, hausdorff, pearson, scatter_csv, scatter_svg, EvalReport, MetricSeries,
};
use crate::models::{coral_fit, train_mlp, CoralModel, LossKind, MlpParams, Sample, TrainConfig, TrainOutcome};
use crate::preprocess::{farthest_point_sampling, pair_covisibility, CommonFrame, StartRule};

pub fn feature_config_from(cfg: &Config) -> Result<FeatureConfig> {
    let mut c = FeatureConfig::default();
    cfg.apply("fps_count", &mut c.fps_count)?;
    cfg.apply("max_sinkhorn_atoms", &mut c.max_sinkhorn_atoms)?;
    cfg.apply("flip_radius_factor", &mut c.flip_radius_factor)?;
    cfg.apply("radius_k", &mut c.radius.k)?;
    cfg.apply("radius_min", &mut c.radius.r_min)?;
    cfg.apply("radius_max", &mut c.radius.r_max)?;
    cfg.apply("sinkhorn_epsilon", &mut c.sinkhorn.epsilon_reg)?;
    cfg.apply("sinkhorn_max_iters", &mut c.sinkhorn.max_iters)?;
    cfg.apply("sinkhorn_tolerance", &mut c.sinkhorn.tolerance)?;
    if let Some(mode) = cfg.get_str("sinkhorn_mode") {
        c.sinkhorn_mode = match mode {
            "cross-cloud" => SinkhornMode::CrossCloud,
            "separate-vs-joint" => SinkhornMode::SeparateVsJoint,
            other => return Err(Error::InvalidParams(format!("unknown sinkhorn_mode {other:?}"))),
        };
    }
    c.radius.validate()?;
    if c.fps_count == 0 || c.max_sinkhorn_atoms == 0 {
        return Err(Error::InvalidParams("fps_count and max_sinkhorn_atoms must be positive".into()));
    }
    Ok(c)
}

pub fn dataset_config_from(cfg: &Config, seed: u64) -> Result<DatasetConfig> {
    let mut c = DatasetConfig { seed, ..Default::default() };
    cfg.apply("inits_per_pair", &mut c.inits_per_pair)?;
    cfg.apply("init_translation_min", &mut c.init_translation[0])?;
    cfg.apply("init_translation_max", &mut c.init_translation[1])?;
    cfg.apply("init_rotation_min_deg", &mut c.init_rotation_deg[0])?;
    cfg.apply("init_rotation_max_deg", &mut c.init_rotation_deg[1])?;
    cfg.apply("icp_max_iters", &mut c.icp.max_iters)?;
    cfg.apply("icp_inlier_threshold", &mut c.icp.inlier_threshold)?;
    cfg.apply("icp_relative_tolerance", &mut c.icp.relative_tolerance)?;
    c.validate()?;
    Ok(c)
}

pub fn train_config_from(cfg: &Config, seed: u64, loss: LossKind) -> Result<TrainConfig> {
    let mut c = TrainConfig { seed, loss, ..Default::default() };
    cfg.apply("epochs", &mut c.epochs)?;
    cfg.apply("batch_size", &mut c.batch_size)?;
    cfg.apply("learning_rate", &mut c.learning_rate)?;
    cfg.apply("lr_step", &mut c.lr_step)?;
    cfg.apply("lr_gamma", &mut c.lr_gamma)?;
    cfg.apply("weight_decay", &mut c.weight_decay)?;
    cfg.apply("hidden", &mut c.hidden)?;
    Ok(c)
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.fmap"))
}

/// Extracts and writes a feature map for every manifest entry; returns the count written.
pub fn featurize(manifest: &DatasetManifest, root: &Path, out_dir: &Path, config: &FeatureConfig) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    let results = parallel_map(&manifest.entries, |e| -> Result<()> {
        let pair = load_pair(root, e)?;
        extract_features(&pair, config)?.save(&feature_path(out_dir, &e.id))
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(manifest.entries.len())
}

/// Feature maps of the entries in `split`, in manifest order.
pub fn load_split_features<'m>(
    manifest: &'m DatasetManifest,
    feature_dir: &Path,
    split: Split,
) -> Result<(Vec<&'m ManifestEntry>, Vec<FeatureMap>)> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let maps = entries.iter().map(|e| FeatureMap::load(&feature_path(feature_dir, &e.id))).collect::<Result<_>>()?;
    Ok((entries, maps))
}

/// Trains on the train split, selecting the checkpoint on the validation split.
pub fn train(manifest: &DatasetManifest, feature_dir: &Path, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig { regress_epsilon: manifest.scheme == Scheme::Epsilon5, ..*config };
    let (tr_e, tr_m) = load_split_features(manifest, feature_dir, Split::Train)?;
    let (va_e, va_m) = load_split_features(manifest, feature_dir, Split::Val)?;
    if tr_e.is_empty() {
        return Err(Error::InvalidParams("the train split is empty".into()));
    }
    let (train, val) = (samples(&tr_e, &tr_m), samples(&va_e, &va_m));
    train_mlp(&train, &val, manifest.scheme.class_count(), &config)
}

fn samples<'a>(entries: &[&ManifestEntry], maps: &'a [FeatureMap]) -> Vec<Sample<'a>> {
    entries.iter().zip(maps).map(|(e, map)| Sample { map, epsilon: Some(e.epsilon) }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub epsilon: f64,
}

pub fn predict_split(model: &MlpParams, manifest: &DatasetManifest, feature_dir: &Path, split: Split) -> Result<Vec<Prediction>> {
    let (entries, maps) = load_split_features(manifest, feature_dir, split)?;
    Ok(entries
        .iter()
        .zip(&maps)
        .map(|(e, m)| Prediction { id: e.id.clone(), label: e.label, predicted: model.predict_class(m), epsilon: e.epsilon })
        .collect())
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("id,label,predicted,epsilon\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{},{}", p.id, p.label, p.predicted, p.epsilon);
    }
    s
}

/// Reads `id,predicted` pairs from a CSV whose header names both columns.
pub fn parse_predictions_csv(text: &str) -> Result<Vec<(String, usize)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Format("empty predictions file".into()))?.split(',').map(str::trim).collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| Error::Format(format!("predictions file lacks a {name} column")));
    let (ci, cp) = (col("id")?, col("predicted")?);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let get = |i: usize| f.get(i).copied().ok_or_else(|| Error::Format(format!("short predictions row {l:?}")));
            let p = get(cp)?.parse().map_err(|_| Error::Format(format!("bad predicted class in {l:?}")))?;
            Ok((get(ci)?.to_string(), p))
        })
        .collect()
}

/// Joins externally supplied predictions with manifest entries by id.
pub fn attach_predictions(manifest: &DatasetManifest, given: &[(String, usize)]) -> Result<Vec<Prediction>> {
    let index: std::collections::HashMap<&str, &ManifestEntry> = manifest.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    given
        .iter()
        .map(|(id, p)| {
            let e = index.get(id.as_str()).ok_or_else(|| Error::Format(format!("unknown entry id {id}")))?;
            Ok(Prediction { id: id.clone(), label: e.label, predicted: *p, epsilon: e.epsilon })
        })
        .collect()
}

pub fn eval_report(preds: &[Prediction], classes: usize) -> Result<EvalReport> {
    let p: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
    let t: Vec<usize> = preds.iter().map(|p| p.label).collect();
    EvalReport::new(&p, &t, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub classes: (usize, usize),
    pub count: usize,
    pub accuracy: f64,
}

/// Mapped binary accuracy over predictions whose true label is one of `classes`.
pub fn binary_eval(preds: &[Prediction], classes: (usize, usize)) -> Result<BinaryReport> {
    let kept: Vec<&Prediction> = preds.iter().filter(|p| p.label == classes.0 || p.label == classes.1).collect();
    if kept.is_empty() {
        return Err(Error::InvalidParams(format!("no entries with labels {classes:?}")));
    }
    let p: Vec<usize> = kept.iter().map(|p| p.predicted).collect();
    let t: Vec<usize> = kept.iter().map(|p| p.label).collect();
    Ok(BinaryReport { classes, count: kept.len(), accuracy: binary_accuracy(&p, &t, classes)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoralReport {
    pub classes: (usize, usize),
    pub model: CoralModel,
    pub train_count: usize,
    pub test_count: usize,
    pub accuracy: f64,
}

/// Fits the CorAl logistic model on train-split pairs labelled `classes` and scores it
/// on the test split; `classes.1` is the positive class.
pub fn coral_baseline(manifest: &DatasetManifest, root: &Path, classes: (usize, usize), config: &FeatureConfig) -> Result<CoralReport> {
    let pick = |split: Split| -> Vec<&ManifestEntry> { manifest.split(split).filter(|e| e.label == classes.0 || e.label == classes.1).collect() };
    let features = |entries: &[&ManifestEntry]| -> Result<Vec<[f64; 2]>> {
        parallel_map(entries, |e| -> Result<[f64; 2]> {
            let (hj, hs) = coral_features(&load_pair(root, e)?, &config.radius)?;
            Ok([hj, hs])
        })
        .into_iter()
        .collect()
    };
    let (train, test) = (pick(Split::Train), pick(Split::Test));
    if test.is_empty() {
        return Err(Error::InvalidParams(format!("no test entries with labels {classes:?}")));
    }
    let x_train = features(&train)?;
    let y_train: Vec<bool> = train.iter().map(|e| e.label == classes.1).collect();
    let model = coral_fit(&x_train, &y_train)?;
    let x_test = features(&test)?;
    let correct = x_test.iter().zip(&test).filter(|(x, e)| (model.predict(**x) >= 0.5) == (e.label == classes.1)).count();
    Ok(CoralReport { classes, model, train_count: train.len(), test_count: test.len(), accuracy: correct as f64 / test.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStudyConfig {
    /// FPS points per cloud for the full-cloud transport distance.
    pub sinkhorn_points: usize,
    pub sinkhorn: SinkhornParams,
    /// Correspondence distance for fitness and inlier RMSE; matches the ICP default.
    pub inlier_threshold: f64,
}

impl Default for MetricStudyConfig {
    fn default() -> Self {
        Self { sinkhorn_points: 1024, sinkhorn: SinkhornParams::default(), inlier_threshold: IcpParams::default().inlier_threshold }
    }
}

pub fn metric_study_config_from(cfg: &Config) -> Result<MetricStudyConfig> {
    let mut c = MetricStudyConfig::default();
    cfg.apply("study_sinkhorn_points", &mut c.sinkhorn_points)?;
    cfg.apply("study_sinkhorn_epsilon", &mut c.sinkhorn.epsilon_reg)?;
    cfg.apply("study_sinkhorn_max_iters", &mut c.sinkhorn.max_iters)?;
    cfg.apply("study_inlier_threshold", &mut c.inlier_threshold)?;
    Ok(c)
}

pub const STUDY_METRICS: [&str; 5] = ["chamfer", "hausdorff", "sinkhorn", "fitness", "inlier_rmse"];

/// Alignment metrics of one pair under its estimated transform, in `STUDY_METRICS` order.
pub fn pair_metrics(pair: &crate::geometry::RegisteredPair, config: &MetricStudyConfig) -> Result<[f64; 5]> {
    let frame = CommonFrame::new(pair);
    let (a, b) = (&frame.points[0], &frame.points[1]);
    let subsample = |pts: &[crate::geometry::Point3]| -> Result<Vec<crate::geometry::Point3>> {
        let n = config.sinkhorn_points.min(pts.len());
        Ok(farthest_point_sampling(pts, n, StartRule::Index(0))?.into_iter().map(|i| pts[i]).collect())
    };
    let div = sinkhorn_divergence(&Measure::uniform(subsample(a)?), &Measure::uniform(subsample(b)?), &config.sinkhorn)?;
    let (fitness, rmse) = evaluate_registration(&pair.cloud1, &pair.cloud0, &pair.est_transform, config.inlier_threshold)?;
    Ok([chamfer(a, b)?, hausdorff(a, b)?, div.value, fitness, rmse])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStudy {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub series: Vec<MetricSeries>,
    /// Pearson r of each series against the true label; `None` for constant series.
    pub pearson_vs_label: Vec<(String, Option<f64>)>,
}

impl MetricStudy {
    pub fn r(&self, name: &str) -> Option<f64> {
        self.pearson_vs_label.iter().find(|(n, _)| n == name).and_then(|(_, r)| *r)
    }
}

/// Computes every study metric per entry of `split`. With `preds`, the model's predicted
/// label is added as a `model` series.
pub fn metric_study(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    config: &MetricStudyConfig,
    preds: Option<&[Prediction]>,
) -> Result<MetricStudy> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let rows = parallel_map(&entries, |e| pair_metrics(&load_pair(root, e)?, config)).into_iter().collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();
    let mut series: Vec<MetricSeries> =
        STUDY_METRICS.iter().enumerate().map(|(k, n)| MetricSeries { name: n.to_string(), values: rows.iter().map(|r| r[k]).collect() }).collect();
    if let Some(preds) = preds {
        let by_id: std::collections::HashMap<&str, usize> = preds.iter().map(|p| (p.id.as_str(), p.predicted)).collect();
        let values = entries
            .iter()
            .map(|e| by_id.get(e.id.as_str()).map(|&p| p as f64).ok_or_else(|| Error::Format(format!("no prediction for {}", e.id))))
            .collect::<Result<_>>()?;
        series.push(MetricSeries { name: "model".into(), values });
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let pearson_vs_label = series
        .iter()
        .map(|s| {
            let r = match pearson(&s.values, &y) {
                Ok(r) => Some(r),
                Err(Error::DegenerateVariance) => None,
                Err(e) => return Err(e),
            };
            Ok((s.name.clone(), r))
        })
        .collect::<Result<_>>()?;
    Ok(MetricStudy {
        ids: entries.iter().map(|e| e.id.clone()).collect(),
        labels,
        epsilon: entries.iter().map(|e| e.epsilon).collect(),
        series,
        pearson_vs_label,
    })
}

pub fn write_metric_study(study: &MetricStudy, out_prefix: &Path) -> Result<()> {
    let with = |ext: &str| PathBuf::from(format!("{}.{ext}", out_prefix.display()));
    write_atomic(&with("csv"), scatter_csv(&study.epsilon, &study.series)?.as_bytes())?;
    write_atomic(&with("svg"), scatter_svg(&study.epsilon, &study.series)?.as_bytes())?;
    write_atomic(&with("json"), serde_json::to_string_pretty(study)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub threshold_class: usize,
    pub pair_count: usize,
    pub selected: Vec<String>,
    pub mean_epsilon_before: f64,
    pub mean_epsilon_after: f64,
    /// `1 − after / before`.
    pub reduction: f64,
    /// Fraction of pairs with ε ≥ 0.25 m before correction.
    pub high_error_fraction: f64,
}

/// Selects pairs predicted at or above `threshold_class` and resets them to ground truth.
pub fn correct_map(preds: &[Prediction], threshold_class: usize) -> Result<CorrectionReport> {
    if preds.is_empty() {
        return Err(Error::InvalidParams("no predictions to correct".into()));
    }
    let classes: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
    let selected = correction_selection(&classes, threshold_class);
    let n = preds.len() as f64;
    let before = preds.iter().map(|p| p.epsilon).sum::<f64>() / n;
    let mut after_eps: Vec<f64> = preds.iter().map(|p| p.epsilon).collect();
    for &i in &selected {
        after_eps[i] = 0.0;
    }
    let after = after_eps.iter().sum::<f64>() / n;
    Ok(CorrectionReport {
        threshold_class,
        pair_count: preds.len(),
        selected: selected.iter().map(|&i| preds[i].id.clone()).collect(),
        mean_epsilon_before: before,
        mean_epsilon_after: after,
        reduction: if before > 0.0 { 1.0 - after / before } else { 0.0 },
        high_error_fraction: preds.iter().filter(|p| p.epsilon >= 0.25).count() as f64 / n,
    })
}

/// Writes both clouds of an entry in cloud0's frame as PLY with co-visibility as `quality`
/// (0 for hidden points). Returns the two paths.
pub fn write_visibility(root: &Path, entry: &ManifestEntry, flip_radius_factor: f64, out_prefix: &Path) -> Result<[PathBuf; 2]> {
    let pair = load_pair(root, entry)?;
    let frame = CommonFrame::new(&pair);
    let vis = pair_covisibility(&frame, flip_radius_factor)?;
    let mut paths = Vec::with_capacity(2);
    for c in 0..2 {
        let q: Vec<f32> = vis[c].covis_score.iter().map(|s| s.unwrap_or(0.0) as f32).collect();
        let path = PathBuf::from(format!("{}_cloud{c}.ply", out_prefix.display()));
        write_atomic(&path, ply_string(&frame.points[c], Some(&q)).as_bytes())?;
        paths.push(path);
    }
    let second = paths.pop().unwrap();
    Ok([paths.pop().unwrap(), second])
}
