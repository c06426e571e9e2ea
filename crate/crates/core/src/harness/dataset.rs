//! Dataset assembly: scans, labelled pairs and the scene-level split.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::icp::{icp_point2point, IcpParams};
use super::parallel_map;
use super::scene::{generate_scene_scan, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, bin_epsilon, perturb, synthetic_class_spec, PerturbationSpec, PointCloud, RegisteredPair, RigidTransform, Scheme};
use crate::io::{load_cloud, save_cloud, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Fractions of scenes assigned to train, validation and test.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.60, 0.15, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParams(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpRecord {
    pub init: RigidTransform,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations: usize,
    /// False when no correspondence existed at the initialization; the estimate is then the init.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scene: usize,
    /// Cloud paths relative to the manifest directory.
    pub cloud0: String,
    pub cloud1: String,
    pub gt_transform: RigidTransform,
    pub est_transform: RigidTransform,
    pub epsilon: f64,
    pub label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icp: Option<IcpRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scheme: Scheme,
    pub seed: u64,
    pub scene_count: usize,
    pub class_counts: Vec<usize>,
    pub warnings: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Scene indices per split, each sorted.
    pub fn scenes_of(&self, split: Split) -> Vec<usize> {
        let mut s: Vec<usize> = self.split(split).map(|e| e.scene).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Loads the clouds of `entry` and rebuilds the pair; ε and label are taken from the entry.
pub fn load_pair(root: &Path, entry: &ManifestEntry) -> Result<RegisteredPair> {
    let cloud0 = load_cloud(&root.join(&entry.cloud0))?;
    let cloud1 = load_cloud(&root.join(&entry.cloud1))?;
    Ok(RegisteredPair {
        cloud0,
        cloud1,
        gt_transform: entry.gt_transform,
        est_transform: entry.est_transform,
        epsilon: entry.epsilon,
        label: entry.label,
    })
}

/// Rechecks stored ε and labels against the clouds on disk; returns the worst ε deviation.
pub fn verify_manifest(root: &Path, manifest: &DatasetManifest) -> Result<f64> {
    let mut worst = 0.0f64;
    for e in &manifest.entries {
        let pair = load_pair(root, e)?;
        let eps = crate::geometry::point_transformation_error(&pair)?;
        worst = worst.max((eps - e.epsilon).abs());
        if manifest.scheme == Scheme::Epsilon5 && bin_epsilon(e.epsilon)? != e.label {
            return Err(Error::Format(format!("entry {} label {} disagrees with its ε {}", e.id, e.label, e.epsilon)));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub icp: IcpParams,
    /// ICP initializations per consecutive pose pair in `epsilon5`.
    pub inits_per_pair: usize,
    /// Log-uniform range of the init translation magnitude, meters.
    pub init_translation: [f64; 2],
    /// Log-uniform range of the init rotation angle, degrees.
    pub init_rotation_deg: [f64; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            icp: IcpParams::default(),
            inits_per_pair: 10,
            init_translation: [0.01, 1.0],
            init_rotation_deg: [0.06, 6.0],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let [t0, t1] = self.init_translation;
        let [r0, r1] = self.init_rotation_deg;
        if self.inits_per_pair == 0 || !(t0 > 0.0 && t1 >= t0 && r0 > 0.0 && r1 >= r0) {
            return Err(Error::InvalidParams(format!("invalid dataset config {self:?}")));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// `count` varied scene specs, each with `poses` trajectory poses.
pub fn generate_scene_specs(count: usize, seed: u64, poses: usize) -> Vec<SceneSpec> {
    (0..count).map(|i| SceneSpec::varied(mix_seed(&[seed, i as u64]), poses)).collect()
}

/// Scene-to-split assignment: a seeded shuffle cut at the split fractions.
pub fn assign_splits(scene_count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..scene_count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n = scene_count as f64;
    let n_train = (SPLIT_FRACTIONS[0] * n).round() as usize;
    let n_val = ((SPLIT_FRACTIONS[1] * n).round() as usize).min(scene_count - n_train);
    let mut splits = vec![Split::Test; scene_count];
    for (rank, &s) in order.iter().enumerate() {
        if rank < n_train {
            splits[s] = Split::Train;
        } else if rank < n_train + n_val {
            splits[s] = Split::Val;
        }
    }
    splits
}

fn scan_path(scene: usize, pose: usize) -> String {
    format!("scans/scene{scene:03}_pose{pose:02}.ply")
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Initialization for ICP: a random rigid perturbation in cloud0's frame composed with `gt`.
pub fn random_init(gt: &RigidTransform, config: &DatasetConfig, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = log_uniform(&mut rng, config.init_translation);
    let angle = log_uniform(&mut rng, config.init_rotation_deg).to_radians();
    let axis = unit_vector(&mut rng);
    let dir = unit_vector(&mut rng);
    let delta = RigidTransform::from_translation(dir * t).compose(&RigidTransform::from_axis_angle(&axis, angle));
    delta.compose(gt)
}

struct PairJob {
    scene: usize,
    pair: usize,
    item: usize,
}

/// Generates scans for every scene pose, builds labelled pairs from consecutive poses and
/// writes clouds plus `manifest.json` under `out_dir`.
pub fn build_dataset(scenes: &[SceneSpec], scheme: Scheme, out_dir: &Path, config: &DatasetConfig) -> Result<DatasetManifest> {
    if scenes.is_empty() {
        return Err(Error::InvalidParams("at least one scene is required".into()));
    }
    config.validate()?;
    for s in scenes {
        s.validate()?;
        if s.poses < 2 {
            return Err(Error::InvalidParams("each scene needs at least two poses".into()));
        }
    }
    std::fs::create_dir_all(out_dir.join("scans"))?;

    let trajectories = scenes.iter().map(SceneSpec::trajectory).collect::<Result<Vec<_>>>()?;
    let scan_jobs: Vec<(usize, usize)> = scenes.iter().enumerate().flat_map(|(s, spec)| (0..spec.poses).map(move |p| (s, p))).collect();
    let scans: Vec<PointCloud> = parallel_map(&scan_jobs, |&(s, p)| -> Result<PointCloud> {
        let cloud = generate_scene_scan(&scenes[s], &trajectories[s][p])?.quantize_f32();
        save_cloud(&cloud, &out_dir.join(scan_path(s, p)))?;
        Ok(cloud)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let offsets: Vec<usize> = scenes.iter().scan(0, |acc, s| Some(std::mem::replace(acc, *acc + s.poses))).collect();
    let scan_of = |s: usize, p: usize| &scans[offsets[s] + p];

    let per_pair = match scheme {
        Scheme::Synthetic10 => scheme.class_count(),
        Scheme::Epsilon5 => config.inits_per_pair,
    };
    let mut jobs = Vec::new();
    for (s, spec) in scenes.iter().enumerate() {
        // Class-major order keeps every prefix of a scene's entries close to balanced.
        for item in 0..per_pair {
            for pair in 0..spec.poses - 1 {
                jobs.push(PairJob { scene: s, pair, item });
            }
        }
    }
    let splits = assign_splits(scenes.len(), config.seed);

    let entries: Vec<ManifestEntry> = parallel_map(&jobs, |job| -> Result<ManifestEntry> {
        let poses = &trajectories[job.scene];
        let gt = poses[job.pair].inverse().compose(&poses[job.pair + 1]);
        let cloud0 = scan_of(job.scene, job.pair);
        let cloud1 = scan_of(job.scene, job.pair + 1);
        let seed = mix_seed(&[config.seed, job.scene as u64, job.pair as u64, job.item as u64]);
        let (est, label, perturbation, icp) = match scheme {
            Scheme::Synthetic10 => {
                let spec = PerturbationSpec { rng_seed: seed, ..synthetic_class_spec(job.item)? };
                let (_, delta) = perturb(&apply_transform(&gt, cloud1), &spec)?;
                (delta.compose(&gt), job.item, Some(spec), None)
            }
            Scheme::Epsilon5 => {
                let init = random_init(&gt, config, seed);
                let record = match icp_point2point(cloud1, cloud0, &init, &config.icp) {
                    Ok(r) => (r.transform, IcpRecord { init, fitness: r.fitness, inlier_rmse: r.inlier_rmse, iterations: r.iterations, converged: true }),
                    Err(Error::NoCorrespondences) => (init, IcpRecord { init, fitness: 0.0, inlier_rmse: 0.0, iterations: 0, converged: false }),
                    Err(e) => return Err(e),
                };
                (record.0, usize::MAX, None, Some(record.1))
            }
        };
        let pair = match scheme {
            Scheme::Synthetic10 => RegisteredPair::new(cloud0.clone(), cloud1.clone(), gt, est, label)?,
            Scheme::Epsilon5 => RegisteredPair::binned(cloud0.clone(), cloud1.clone(), gt, est)?,
        };
        Ok(ManifestEntry {
            id: format!("s{:03}_p{:02}_{:02}", job.scene, job.pair, job.item),
            scene: job.scene,
            cloud0: scan_path(job.scene, job.pair),
            cloud1: scan_path(job.scene, job.pair + 1),
            gt_transform: gt,
            est_transform: est,
            epsilon: pair.epsilon,
            label: pair.label,
            split: splits[job.scene],
            perturbation,
            icp,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut class_counts = vec![0; scheme.class_count()];
    for e in &entries {
        class_counts[e.label] += 1;
    }
    let mut warnings: Vec<String> = class_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(k, _)| format!("class {k} has no examples"))
        .collect();
    let failed = entries.iter().filter(|e| e.icp.is_some_and(|r| !r.converged)).count();
    if failed > 0 {
        warnings.push(format!("{failed} ICP runs had no correspondences at initialization"));
    }
    let manifest = DatasetManifest { scheme, seed: config.seed, scene_count: scenes.len(), class_counts, warnings, entries };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Directory holding a manifest file.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}
