//! Point-to-point ICP with a closed-form SVD update.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Correspondences at or beyond this distance are outliers, meters.
    pub inlier_threshold: f64,
    /// Stop when the truncated error improves by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_iters: 30, inlier_threshold: 0.2, relative_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    /// Inlier fraction of the source at the final transform.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations: usize,
    /// Mean of `min(d², τ²)` over the source before each update and at the end.
    pub error_history: Vec<f64>,
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]` (Kabsch).
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(Error::NoCorrespondences);
    }
    let n = src.len() as f64;
    let ps = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let pd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (s, d)| acc + (s.coords - ps) * (d.coords - pd).transpose());
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    Ok(RigidTransform::from_nearly_orthonormal(r, pd - r * ps))
}

struct Matches {
    src: Vec<Point3>,
    dst: Vec<Point3>,
    truncated_mean: f64,
    inlier_sq_sum: f64,
}

fn correspond(source: &[Point3], tree: &KdTree, t: &RigidTransform, tau: f64) -> Matches {
    let mut m = Matches { src: Vec::new(), dst: Vec::new(), truncated_mean: 0.0, inlier_sq_sum: 0.0 };
    let targets = tree.points();
    for p in source {
        let (j, d) = tree.nearest(&t.apply(p)).expect("non-empty target");
        if d < tau {
            m.src.push(*p);
            m.dst.push(targets[j]);
            m.inlier_sq_sum += d * d;
            m.truncated_mean += d * d;
        } else {
            m.truncated_mean += tau * tau;
        }
    }
    m.truncated_mean /= source.len() as f64;
    m
}

/// Fitness and inlier RMSE of `source` mapped by `t` onto `target`, without iterating.
pub fn evaluate_registration(source: &PointCloud, target: &PointCloud, t: &RigidTransform, inlier_threshold: f64) -> Result<(f64, f64)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(&target.points);
    let m = correspond(&source.points, &tree, t, inlier_threshold);
    let n = m.src.len();
    Ok((n as f64 / source.len() as f64, if n > 0 { (m.inlier_sq_sum / n as f64).sqrt() } else { 0.0 }))
}

/// Registers `source` onto `target` starting from `init`.
pub fn icp_point2point(source: &PointCloud, target: &PointCloud, init: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    if source.len() < 10 || target.len() < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: source.len().min(target.len()) });
    }
    if !(params.inlier_threshold > 0.0) {
        return Err(Error::InvalidParams("inlier threshold must be positive".into()));
    }
    let tree = KdTree::new(&target.points);
    let tau = params.inlier_threshold;
    let mut t = *init;
    let mut m = correspond(&source.points, &tree, &t, tau);
    if m.src.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let mut history = vec![m.truncated_mean];
    let mut iterations = 0;
    while iterations < params.max_iters && m.src.len() >= 3 {
        let next = kabsch(&m.src, &m.dst)?;
        let nm = correspond(&source.points, &tree, &next, tau);
        iterations += 1;
        let previous = m.truncated_mean;
        // Fixed correspondences cannot get worse under the least-squares update, so the
        // truncated error is non-increasing up to rounding.
        if nm.truncated_mean > previous {
            break;
        }
        t = next;
        m = nm;
        history.push(m.truncated_mean);
        if previous - m.truncated_mean <= params.relative_tolerance * previous {
            break;
        }
    }
    let inliers = m.src.len();
    Ok(IcpResult {
        transform: t,
        fitness: inliers as f64 / source.len() as f64,
        inlier_rmse: if inliers > 0 { (m.inlier_sq_sum / inliers as f64).sqrt() } else { 0.0 },
        iterations,
        error_history: history,
    })
}
