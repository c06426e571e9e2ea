//! Rigid-motion algebra, transform error metrics, perturbations and class binning.
//!
//! A [`PointCloud`] stores its points in its own frame together with the pose of the
//! sensor in that frame. Raw scans are expressed in the sensor frame, so their
//! `sensor_pose` is the identity until a transform is applied.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Upper edges of the registration-error bins, in meters. The last bin is unbounded.
pub const EPSILON_BIN_EDGES: [f64; 4] = [0.03, 0.10, 0.25, 0.50];

/// Number of classes in the perturbation scheme.
pub const SYNTHETIC_CLASSES: usize = 10;
/// Number of classes in the registration-error scheme.
pub const EPSILON_CLASSES: usize = 5;

/// Rotation followed by translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        TransformRepr { rotation: t.rotation_row_major(), translation: t.translation.into() }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        RigidTransform::new(Matrix3::from_row_slice(&r.rotation), Vector3::from(r.translation))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Builds a transform, checking orthonormality and handedness of `rotation`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform("rotation is not orthonormal".into()));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform("rotation determinant is not +1".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation by `angle` radians about the unit `axis` through the origin (Rodrigues).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = axis.normalize();
        let cross = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let rotation = Matrix3::identity() + cross * angle.sin() + cross * cross * (1.0 - angle.cos());
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Rotation about the z axis followed by a translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        let mut t = Self::from_axis_angle(&Vector3::z(), yaw);
        t.translation = translation;
        t
    }

    /// Re-orthonormalizes a nearly orthonormal matrix via SVD before constructing.
    pub fn from_nearly_orthonormal(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self { rotation: u * d * v_t, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Ordered points with the sensor pose expressed in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub sensor_pose: RigidTransform,
    /// Vertical angular resolution of the lidar, radians.
    pub vertical_angular_resolution: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, sensor_pose: RigidTransform, vertical_angular_resolution: f64) -> Result<Self> {
        if !(vertical_angular_resolution > 0.0 && vertical_angular_resolution.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "vertical angular resolution must be positive, got {vertical_angular_resolution}"
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParams(format!("non-finite point {p:?}")));
        }
        Ok(Self { points, sensor_pose, vertical_angular_resolution })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sensor_origin(&self) -> Point3 {
        Point3::from(*self.sensor_pose.translation())
    }

    /// Rounds every coordinate to the nearest `f32`, which makes the cloud survive
    /// a single-precision PLY round trip bit-exactly.
    pub fn quantize_f32(mut self) -> Self {
        for p in &mut self.points {
            for c in p.coords.iter_mut() {
                *c = *c as f32 as f64;
            }
        }
        self
    }
}

/// Maps each point through `t` and composes the sensor pose with it.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        sensor_pose: t.compose(&cloud.sensor_pose),
        vertical_angular_resolution: cloud.vertical_angular_resolution,
    }
}

/// Label scheme of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Ten perturbation classes `(θ, e_d) = (0.01k, 0.1k)`.
    #[serde(rename = "synthetic10")]
    Synthetic10,
    /// Five registration-error bins.
    #[serde(rename = "epsilon5")]
    Epsilon5,
}

impl Scheme {
    pub fn class_count(self) -> usize {
        match self {
            Scheme::Synthetic10 => SYNTHETIC_CLASSES,
            Scheme::Epsilon5 => EPSILON_CLASSES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Synthetic10 => "synthetic10",
            Scheme::Epsilon5 => "epsilon5",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic10" => Ok(Scheme::Synthetic10),
            "epsilon5" => Ok(Scheme::Epsilon5),
            other => Err(Error::InvalidParams(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Two clouds with the ground-truth and estimated transforms from cloud1's frame into cloud0's.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredPair {
    pub cloud0: PointCloud,
    pub cloud1: PointCloud,
    pub gt_transform: RigidTransform,
    pub est_transform: RigidTransform,
    pub epsilon: f64,
    pub label: usize,
}

impl RegisteredPair {
    /// Builds a pair, deriving ε from the transforms. The label is supplied by the caller
    /// because synthetic pairs are labelled by perturbation class, not by ε.
    pub fn new(
        cloud0: PointCloud,
        cloud1: PointCloud,
        gt_transform: RigidTransform,
        est_transform: RigidTransform,
        label: usize,
    ) -> Result<Self> {
        let epsilon = transformation_error(&gt_transform, &est_transform, &cloud1)?;
        Ok(Self { cloud0, cloud1, gt_transform, est_transform, epsilon, label })
    }

    /// Builds an `epsilon5` pair, labelling it by binning ε.
    pub fn binned(
        cloud0: PointCloud,
        cloud1: PointCloud,
        gt_transform: RigidTransform,
        est_transform: RigidTransform,
    ) -> Result<Self> {
        let mut pair = Self::new(cloud0, cloud1, gt_transform, est_transform, 0)?;
        pair.label = bin_epsilon(pair.epsilon)?;
        Ok(pair)
    }
}

/// Mean displacement between `gt` and `est` applied to the points of `cloud`.
pub fn transformation_error(gt: &RigidTransform, est: &RigidTransform, cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let total: f64 = cloud.points.iter().map(|p| (gt.apply(p) - est.apply(p)).norm()).sum();
    Ok(total / cloud.len() as f64)
}

/// Average point transformation error ε of a registered pair, over all raw cloud1 points.
pub fn point_transformation_error(pair: &RegisteredPair) -> Result<f64> {
    transformation_error(&pair.gt_transform, &pair.est_transform, &pair.cloud1)
}

/// Maps ε (meters) to its half-open bin `[lo, hi)`.
pub fn bin_epsilon(epsilon: f64) -> Result<usize> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidError(epsilon));
    }
    Ok(EPSILON_BIN_EDGES.iter().take_while(|&&edge| epsilon >= edge).count())
}

/// Rotation about the sensor's vertical axis, combined with a planar translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Radians.
    pub theta: f64,
    /// Meters.
    pub e_d: f64,
    pub rng_seed: u64,
}

pub fn synthetic_class_spec(class_index: usize) -> Result<PerturbationSpec> {
    if class_index >= SYNTHETIC_CLASSES {
        return Err(Error::ClassIndexOutOfRange { index: class_index, count: SYNTHETIC_CLASSES });
    }
    let k = class_index as f64;
    Ok(PerturbationSpec { theta: 0.01 * k, e_d: 0.1 * k, rng_seed: 0 })
}

/// Rotates the cloud by ±θ about its sensor's z axis (through the sensor origin), then
/// translates it by `e_d` along a random heading in the xy-plane.
///
/// Sign and heading come from a ChaCha8 stream seeded with `spec.rng_seed`.
pub fn perturb(cloud: &PointCloud, spec: &PerturbationSpec) -> Result<(PointCloud, RigidTransform)> {
    if !(spec.theta >= 0.0 && spec.e_d >= 0.0) {
        return Err(Error::InvalidParams(format!("perturbation must be non-negative: {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);

    let axis = cloud.sensor_pose.rotation().column(2).into_owned();
    let center = *cloud.sensor_pose.translation();
    let spin = RigidTransform::from_axis_angle(&axis, sign * spec.theta);
    let about_sensor = RigidTransform::from_translation(center)
        .compose(&spin)
        .compose(&RigidTransform::from_translation(-center));
    let shift = RigidTransform::from_translation(Vector3::new(
        spec.e_d * heading.cos(),
        spec.e_d * heading.sin(),
        0.0,
    ));
    let perturbation = if spec.theta == 0.0 { shift } else { shift.compose(&about_sensor) };
    Ok((apply_transform(&perturbation, cloud), perturbation))
}
