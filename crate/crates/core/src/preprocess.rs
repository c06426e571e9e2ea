//! Co-visibility, farthest point sampling and dynamic-radius neighborhoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RegisteredPair};
use crate::hull::ConvexHull;
use crate::spatial::KdTree;

/// Default spherical-flip radius multiplier.
pub const DEFAULT_FLIP_RADIUS_FACTOR: f64 = 100.0;

/// Both clouds of a pair expressed in cloud0's frame under the estimated transform.
#[derive(Debug, Clone)]
pub struct CommonFrame {
    pub points: [Vec<Point3>; 2],
    pub sensors: [Point3; 2],
    pub alpha: f64,
}

impl CommonFrame {
    pub fn new(pair: &RegisteredPair) -> Self {
        let est = &pair.est_transform;
        let moved: Vec<Point3> = pair.cloud1.points.iter().map(|p| est.apply(p)).collect();
        let sensor1 = est.compose(&pair.cloud1.sensor_pose);
        CommonFrame {
            points: [pair.cloud0.points.clone(), moved],
            sensors: [pair.cloud0.sensor_origin(), Point3::from(*sensor1.translation())],
            alpha: pair.cloud0.vertical_angular_resolution,
        }
    }

    pub fn len(&self, cloud: usize) -> usize {
        self.points[cloud].len()
    }

    pub fn joint_len(&self) -> usize {
        self.points[0].len() + self.points[1].len()
    }
}

/// Hidden point removal output.
#[derive(Debug, Clone, PartialEq)]
pub struct HprResult {
    pub visible: Vec<bool>,
    /// Points coinciding with the viewpoint; they are reported hidden.
    pub coincident: usize,
}

struct FlippedHull {
    hull: ConvexHull,
    /// Index of the viewpoint inside the hull input.
    viewpoint_index: usize,
    /// Map from hull input index to cloud index.
    source: Vec<usize>,
}

fn flipped_hull(points: &[Point3], viewpoint: &Point3, flip_radius_factor: f64) -> Result<(FlippedHull, usize)> {
    if !(flip_radius_factor > 1.0) {
        return Err(Error::InvalidParams(format!("flip radius factor must exceed 1, got {flip_radius_factor}")));
    }
    let mut rel = Vec::with_capacity(points.len());
    let mut source = Vec::with_capacity(points.len());
    let mut coincident = 0;
    for (i, p) in points.iter().enumerate() {
        let q = p - viewpoint;
        if q.norm() <= 1e-12 {
            coincident += 1;
            continue;
        }
        rel.push(q);
        source.push(i);
    }
    let max_norm = rel.iter().map(|q| q.norm()).fold(0.0, f64::max);
    let flip = flip_radius_factor * max_norm;
    let mut flipped: Vec<Point3> = rel
        .iter()
        .map(|q| {
            let r = q.norm();
            Point3::from(q * (2.0 * flip / r - 1.0))
        })
        .collect();
    let viewpoint_index = flipped.len();
    flipped.push(Point3::origin());
    let hull = ConvexHull::compute(&flipped)?;
    Ok((FlippedHull { hull, viewpoint_index, source }, coincident))
}

/// Marks points visible from `viewpoint` by spherical flipping and convex-hull membership.
pub fn hidden_point_removal(cloud: &PointCloud, viewpoint: &Point3, flip_radius_factor: f64) -> Result<HprResult> {
    hidden_point_removal_points(&cloud.points, viewpoint, flip_radius_factor)
}

pub fn hidden_point_removal_points(points: &[Point3], viewpoint: &Point3, flip_radius_factor: f64) -> Result<HprResult> {
    let (fh, coincident) = flipped_hull(points, viewpoint, flip_radius_factor)?;
    let mut visible = vec![false; points.len()];
    for &v in &fh.hull.vertices {
        if v != fh.viewpoint_index {
            visible[fh.source[v]] = true;
        }
    }
    Ok(HprResult { visible, coincident })
}

/// Visibility mask plus normalized co-visibility score for visible points.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityResult {
    pub visible_mask: Vec<bool>,
    /// `Some` exactly where `visible_mask` is true; values lie in `[0, 1]`.
    pub covis_score: Vec<Option<f64>>,
}

impl VisibilityResult {
    pub fn visible_count(&self) -> usize {
        self.visible_mask.iter().filter(|&&v| v).count()
    }
}

/// Mean protrusion angle of each visible point relative to its hull neighbors,
/// min-max normalized over the cloud.
pub fn covisibility_scores(cloud: &PointCloud, viewpoint: &Point3, flip_radius_factor: f64) -> Result<VisibilityResult> {
    covisibility_scores_points(&cloud.points, viewpoint, flip_radius_factor)
}

pub fn covisibility_scores_points(points: &[Point3], viewpoint: &Point3, flip_radius_factor: f64) -> Result<VisibilityResult> {
    let (fh, _) = flipped_hull(points, viewpoint, flip_radius_factor)?;
    let adjacency = fh.hull.adjacency(fh.viewpoint_index + 1);
    let mut raw = vec![None; points.len()];
    for &v in &fh.hull.vertices {
        if v == fh.viewpoint_index {
            continue;
        }
        let p = points[fh.source[v]] - viewpoint;
        let a = p.norm();
        let mut total = 0.0;
        let mut count = 0usize;
        for &u in &adjacency[v] {
            if u == fh.viewpoint_index {
                continue;
            }
            let q = points[fh.source[u]] - viewpoint;
            let b = q.norm();
            let e = (p - q).norm();
            if e <= 0.0 {
                continue;
            }
            let gamma = ((a * a + e * e - b * b) / (2.0 * a * e)).clamp(-1.0, 1.0).acos();
            let beta = ((b * b + e * e - a * a) / (2.0 * b * e)).clamp(-1.0, 1.0).acos();
            total += gamma - beta;
            count += 1;
        }
        if count == 0 {
            return Err(Error::MalformedHull(fh.source[v]));
        }
        raw[fh.source[v]] = Some(total / count as f64);
    }
    let visible_mask: Vec<bool> = raw.iter().map(Option::is_some).collect();
    Ok(VisibilityResult { visible_mask, covis_score: min_max_normalize(&raw) })
}

fn min_max_normalize(raw: &[Option<f64>]) -> Vec<Option<f64>> {
    let (lo, hi) = raw.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    raw.iter()
        .map(|v| v.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }))
        .collect()
}

/// Co-visibility of each cloud of a pair: a point counts as co-visible when it is visible
/// from both sensors, and its score is the smaller of the two per-view scores.
pub fn pair_covisibility(frame: &CommonFrame, flip_radius_factor: f64) -> Result<[VisibilityResult; 2]> {
    let mut out = Vec::with_capacity(2);
    for cloud in 0..2 {
        let own = covisibility_scores_points(&frame.points[cloud], &frame.sensors[cloud], flip_radius_factor)?;
        let other = covisibility_scores_points(&frame.points[cloud], &frame.sensors[1 - cloud], flip_radius_factor)?;
        let covis_score: Vec<Option<f64>> = own
            .covis_score
            .iter()
            .zip(&other.covis_score)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(a.min(*b)),
                _ => None,
            })
            .collect();
        let visible_mask = covis_score.iter().map(Option::is_some).collect();
        out.push(VisibilityResult { visible_mask, covis_score });
    }
    let second = out.pop().unwrap();
    let first = out.pop().unwrap();
    Ok([first, second])
}

/// Initialization rule for farthest point sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartRule {
    /// The point farthest from the centroid (lowest index on ties).
    #[default]
    FarthestFromCentroid,
    Index(usize),
}

/// Greedy max-min subset selection; returns `count` indices in selection order.
pub fn farthest_point_sampling(points: &[Point3], count: usize, start_rule: StartRule) -> Result<Vec<usize>> {
    if count > points.len() {
        return Err(Error::NotEnoughPoints { requested: count, available: points.len() });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let start = match start_rule {
        StartRule::Index(i) if i < points.len() => i,
        StartRule::Index(i) => return Err(Error::InvalidParams(format!("start index {i} out of range"))),
        StartRule::FarthestFromCentroid => {
            let centroid = points.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64;
            argmax((0..points.len()).map(|i| (points[i].coords - centroid).norm_squared()))
        }
    };
    let mut selected = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..count {
        selected.push(current);
        min_dist[current] = f64::NEG_INFINITY;
        let c = points[current];
        for (i, p) in points.iter().enumerate() {
            if min_dist[i] > f64::NEG_INFINITY {
                min_dist[i] = min_dist[i].min((p - c).norm_squared());
            }
        }
        current = argmax(min_dist.iter().copied());
    }
    Ok(selected)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Neighborhood radius parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusParams {
    pub k: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for RadiusParams {
    fn default() -> Self {
        Self { k: 5.0, r_min: 0.5, r_max: 7.5 }
    }
}

impl RadiusParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.k >= 1.0) {
            return Err(Error::InvalidParams(format!("bad radius parameters {self:?}")));
        }
        Ok(())
    }
}

/// `clip(√2 sin(kα) d d̃ / √(d² + d̃²), r_min, r_max)`.
pub fn dynamic_radius(d: f64, d_tilde: f64, alpha: f64, params: &RadiusParams) -> Result<f64> {
    if !(d > 0.0 && d_tilde > 0.0) {
        return Err(Error::InvalidDistance { d, d_tilde });
    }
    let angle = params.k * alpha;
    if !(angle > 0.0 && angle < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidParams(format!("k·α = {angle} outside (0, π/2)")));
    }
    let r = std::f64::consts::SQRT_2 * angle.sin() * (d * d_tilde) / (d * d + d_tilde * d_tilde).sqrt();
    Ok(r.clamp(params.r_min, params.r_max))
}

/// Local neighborhood of a sampled center point.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    /// Cloud (0 or 1) the center belongs to.
    pub cloud: usize,
    /// Index of the center within its cloud.
    pub center_index: usize,
    /// Separate: indices within the center's cloud. Joint: indices into the joint cloud,
    /// where cloud1 indices are offset by the size of cloud0.
    pub member_indices: Vec<usize>,
    pub radius: f64,
}

impl Neighborhood {
    /// Splits joint member indices into per-cloud indices.
    pub fn split_joint(&self, n0: usize) -> (Vec<usize>, Vec<usize>) {
        let (a, b): (Vec<usize>, Vec<usize>) = self.member_indices.iter().partition(|&&i| i < n0);
        (a, b.into_iter().map(|i| i - n0).collect())
    }
}

/// Separate and joint neighborhoods, one entry per sampled point (cloud0 samples first).
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub separate: Vec<Neighborhood>,
    pub joint: Vec<Neighborhood>,
}

/// Builds separate and joint neighborhoods around the sampled points of each cloud.
pub fn build_neighborhoods(
    pair: &RegisteredPair,
    sampled_indices: &[Vec<usize>; 2],
    params: &RadiusParams,
) -> Result<Neighborhoods> {
    let frame = CommonFrame::new(pair);
    let trees = [KdTree::new(&frame.points[0]), KdTree::new(&frame.points[1])];
    neighborhoods_in_frame(&frame, &trees, sampled_indices, params)
}

pub fn neighborhoods_in_frame(
    frame: &CommonFrame,
    trees: &[KdTree<'_>; 2],
    sampled_indices: &[Vec<usize>; 2],
    params: &RadiusParams,
) -> Result<Neighborhoods> {
    params.validate()?;
    let n0 = frame.len(0);
    let mut separate = Vec::new();
    let mut joint = Vec::new();
    for cloud in 0..2 {
        let other = 1 - cloud;
        for &center_index in &sampled_indices[cloud] {
            let p = frame.points[cloud].get(center_index).ok_or_else(|| {
                Error::InvalidParams(format!("sampled index {center_index} out of range for cloud {cloud}"))
            })?;
            let d = (p - frame.sensors[cloud]).norm();
            let d_tilde = (p - frame.sensors[other]).norm();
            let radius = dynamic_radius(d, d_tilde, frame.alpha, params)?;
            let own = trees[cloud].within_radius(p, radius);
            let foreign = trees[other].within_radius(p, radius);
            let (in0, in1) = if cloud == 0 { (&own, &foreign) } else { (&foreign, &own) };
            let members: Vec<usize> = in0.iter().copied().chain(in1.iter().map(|i| i + n0)).collect();
            joint.push(Neighborhood { cloud, center_index, member_indices: members, radius });
            separate.push(Neighborhood { cloud, center_index, member_indices: own, radius });
        }
    }
    Ok(Neighborhoods { separate, joint })
}
