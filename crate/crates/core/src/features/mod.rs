//! Per-sample-point feature extraction and the `N × 8` feature map.
//!
//! Column layout of every row:
//!
//! | col | feature |
//! |-----|---------|
//! | 0 | separate local entropy (nats) |
//! | 1 | joint local entropy (nats) |
//! | 2 | local Sinkhorn divergence (m²) |
//! | 3 | co-visibility score |
//! | 4 | origin flag (0 = cloud0, 1 = cloud1) |
//! | 5 | separate reliability weight `|Ω|/|P_i|` |
//! | 6 | joint reliability weight `|Ω|/|P_{0,1}|` |
//! | 7 | range to own sensor (m) |

pub mod entropy;
pub mod sinkhorn;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RegisteredPair};
use crate::preprocess::{
    farthest_point_sampling, neighborhoods_in_frame, pair_covisibility, CommonFrame, Neighborhood, Neighborhoods,
    RadiusParams, StartRule, VisibilityResult, DEFAULT_FLIP_RADIUS_FACTOR,
};
use crate::spatial::KdTree;

pub use entropy::{coral_pair_features, local_diff_entropy};
pub use sinkhorn::{sinkhorn_distance, sinkhorn_divergence, Measure, SinkhornParams};

pub const FEATURE_DIM: usize = 8;
const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const FMAP_VERSION: u32 = 1;

pub mod col {
    pub const H_SEP: usize = 0;
    pub const H_JOINT: usize = 1;
    pub const SINKHORN: usize = 2;
    pub const COVIS: usize = 3;
    pub const ORIGIN: usize = 4;
    pub const W_SEP: usize = 5;
    pub const W_JOINT: usize = 6;
    pub const RANGE: usize = 7;
}

/// Which two point sets the local Sinkhorn feature compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SinkhornMode {
    /// The cloud0 and cloud1 members of the joint neighborhood.
    #[default]
    CrossCloud,
    /// The separate neighborhood against the joint neighborhood.
    SeparateVsJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Points sampled from each cloud.
    pub fps_count: usize,
    pub radius: RadiusParams,
    pub sinkhorn: SinkhornParams,
    pub sinkhorn_mode: SinkhornMode,
    /// Cap on atoms per side of a local transport problem; larger sides are thinned
    /// by an even stride over their sorted indices.
    pub max_sinkhorn_atoms: usize,
    pub flip_radius_factor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fps_count: 1024,
            radius: RadiusParams::default(),
            sinkhorn: SinkhornParams::default(),
            sinkhorn_mode: SinkhornMode::default(),
            max_sinkhorn_atoms: 64,
            flip_radius_factor: DEFAULT_FLIP_RADIUS_FACTOR,
        }
    }
}

/// Per-pair features and coordinates, stored in single precision as on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// Row-major `N × FEATURE_DIM`.
    pub features: Vec<f32>,
    /// Row-major `N × 3`, common frame.
    pub coords: Vec<f32>,
    pub label: u32,
}

impl FeatureMap {
    pub fn rows(&self) -> usize {
        self.features.len() / FEATURE_DIM
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
    }

    pub fn coord(&self, i: usize) -> [f32; 3] {
        [self.coords[3 * i], self.coords[3 * i + 1], self.coords[3 * i + 2]]
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let n = self.rows() as u32;
        w.write_all(FMAP_MAGIC)?;
        for v in [FMAP_VERSION, n, FEATURE_DIM as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.features.iter().chain(&self.coords) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.label.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FMAP_MAGIC {
            return Err(Error::Format("not a feature map (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FMAP_VERSION {
            return Err(Error::Format(format!("unsupported feature map version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        if d != FEATURE_DIM {
            return Err(Error::Format(format!("feature dimension {d}, expected {FEATURE_DIM}")));
        }
        let features = read_f32s(&mut r, n * d)?;
        let coords = read_f32s(&mut r, n * 3)?;
        let label = read_u32(&mut r)?;
        Ok(Self { features, coords, label })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Debug export: header row then one line per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h_sep,h_joint,sinkhorn,covis,origin,w_sep,w_joint,range,x,y,z\n");
        for i in 0..self.rows() {
            let fields: Vec<String> = self.row(i).iter().chain(self.coord(i).iter()).map(|v| v.to_string()).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Evenly strided subset of at most `cap` items.
fn thin<T: Copy>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|k| items[k * items.len() / cap]).collect()
}

fn recentered(points: impl Iterator<Item = Point3>, center: &Point3) -> Vec<Point3> {
    points.map(|p| Point3::from(p - center)).collect()
}

/// Sinkhorn divergence inside the joint neighborhood of a sampled point, with
/// coordinates re-centered at that point. `None` when one side is empty.
pub fn local_sinkhorn_feature(
    frame: &CommonFrame,
    separate: &Neighborhood,
    joint: &Neighborhood,
    config: &FeatureConfig,
) -> Result<Option<f64>> {
    let center = frame.points[joint.cloud][joint.center_index];
    let n0 = frame.len(0);
    let (side_a, side_b): (Vec<Point3>, Vec<Point3>) = match config.sinkhorn_mode {
        SinkhornMode::CrossCloud => {
            let (in0, in1) = joint.split_joint(n0);
            (
                recentered(thin(&in0, config.max_sinkhorn_atoms).into_iter().map(|i| frame.points[0][i]), &center),
                recentered(thin(&in1, config.max_sinkhorn_atoms).into_iter().map(|i| frame.points[1][i]), &center),
            )
        }
        SinkhornMode::SeparateVsJoint => {
            let joint_point = |i: usize| if i < n0 { frame.points[0][i] } else { frame.points[1][i - n0] };
            (
                recentered(
                    thin(&separate.member_indices, config.max_sinkhorn_atoms)
                        .into_iter()
                        .map(|i| frame.points[separate.cloud][i]),
                    &center,
                ),
                recentered(thin(&joint.member_indices, config.max_sinkhorn_atoms).into_iter().map(joint_point), &center),
            )
        }
    };
    if side_a.is_empty() || side_b.is_empty() {
        return Ok(None);
    }
    let div = sinkhorn_divergence(&Measure::uniform(side_a), &Measure::uniform(side_b), &config.sinkhorn)?;
    Ok(Some(div.value))
}

/// Sample indices per cloud: FPS over the co-visible points, falling back to the whole
/// cloud when fewer than `count` points are co-visible.
pub fn sample_points(frame: &CommonFrame, visibility: &[VisibilityResult; 2], count: usize) -> Result<[Vec<usize>; 2]> {
    let mut out: [Vec<usize>; 2] = Default::default();
    for cloud in 0..2 {
        let candidates: Vec<usize> = if visibility[cloud].visible_count() >= count {
            (0..frame.len(cloud)).filter(|&i| visibility[cloud].visible_mask[i]).collect()
        } else {
            (0..frame.len(cloud)).collect()
        };
        let pts: Vec<Point3> = candidates.iter().map(|&i| frame.points[cloud][i]).collect();
        out[cloud] = farthest_point_sampling(&pts, count, StartRule::default())?.into_iter().map(|k| candidates[k]).collect();
    }
    Ok(out)
}

/// Assembles one row per sampled point. Undefined entropy or transport values are
/// imputed with the per-pair mean of the defined values in the same column.
pub fn assemble_features(
    frame: &CommonFrame,
    visibility: &[VisibilityResult; 2],
    sampled: &[Vec<usize>; 2],
    neighborhoods: &Neighborhoods,
    config: &FeatureConfig,
    label: u32,
) -> Result<FeatureMap> {
    let n0 = frame.len(0);
    let joint_total = frame.joint_len() as f64;
    let rows = neighborhoods.separate.len();
    debug_assert_eq!(rows, sampled[0].len() + sampled[1].len());

    let mut raw: Vec<[Option<f64>; 3]> = Vec::with_capacity(rows);
    for (sep, joint) in neighborhoods.separate.iter().zip(&neighborhoods.joint) {
        let h_sep = entropy::entropy_of(sep.member_indices.iter().map(|&i| &frame.points[sep.cloud][i]));
        let h_joint = entropy::entropy_of(
            joint.member_indices.iter().map(|&i| if i < n0 { &frame.points[0][i] } else { &frame.points[1][i - n0] }),
        );
        let s = local_sinkhorn_feature(frame, sep, joint, config)?;
        raw.push([h_sep, h_joint, s]);
    }
    let mut means = [0.0; 3];
    for (c, mean) in means.iter_mut().enumerate() {
        let defined: Vec<f64> = raw.iter().filter_map(|r| r[c]).collect();
        if !defined.is_empty() {
            *mean = defined.iter().sum::<f64>() / defined.len() as f64;
        }
    }

    let mut features = Vec::with_capacity(rows * FEATURE_DIM);
    let mut coords = Vec::with_capacity(rows * 3);
    for ((sep, joint), r) in neighborhoods.separate.iter().zip(&neighborhoods.joint).zip(&raw) {
        let cloud = sep.cloud;
        let p = frame.points[cloud][sep.center_index];
        let covis = visibility[cloud].covis_score[sep.center_index].unwrap_or(0.0);
        let row = [
            r[0].unwrap_or(means[0]),
            r[1].unwrap_or(means[1]),
            r[2].unwrap_or(means[2]),
            covis,
            cloud as f64,
            sep.member_indices.len() as f64 / frame.len(cloud) as f64,
            joint.member_indices.len() as f64 / joint_total,
            (p - frame.sensors[cloud]).norm(),
        ];
        features.extend(row.iter().map(|&v| v as f32));
        coords.extend(p.coords.iter().map(|&v| v as f32));
    }
    Ok(FeatureMap { features, coords, label })
}

/// Runs co-visibility, sampling, neighborhoods and feature assembly for one pair.
pub fn extract_features(pair: &RegisteredPair, config: &FeatureConfig) -> Result<FeatureMap> {
    let frame = CommonFrame::new(pair);
    let visibility = pair_covisibility(&frame, config.flip_radius_factor)?;
    let sampled = sample_points(&frame, &visibility, config.fps_count)?;
    let trees = [KdTree::new(&frame.points[0]), KdTree::new(&frame.points[1])];
    let neighborhoods = neighborhoods_in_frame(&frame, &trees, &sampled, &config.radius)?;
    assemble_features(&frame, &visibility, &sampled, &neighborhoods, config, pair.label as u32)
}

/// CorAl aggregate entropies with one neighborhood per point of both clouds.
pub fn coral_features(pair: &RegisteredPair, radius: &RadiusParams) -> Result<(f64, f64)> {
    let frame = CommonFrame::new(pair);
    let trees = [KdTree::new(&frame.points[0]), KdTree::new(&frame.points[1])];
    let all = [(0..frame.len(0)).collect(), (0..frame.len(1)).collect()];
    let neighborhoods = neighborhoods_in_frame(&frame, &trees, &all, radius)?;
    coral_pair_features(&frame, &neighborhoods)
}
