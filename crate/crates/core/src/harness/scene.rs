//! Procedural box-room scenes and a ray-cast spinning-lidar model.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    /// Ring spacing α, radians.
    pub vertical_angular_resolution: f64,
    /// Azimuth step, radians.
    pub horizontal_resolution: f64,
    /// Lowest and highest ring elevation, radians.
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
    pub sensor_height: f64,
    /// Standard deviation of additive range noise, meters.
    pub range_noise: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            vertical_angular_resolution: 2f64.to_radians(),
            horizontal_resolution: 1.5f64.to_radians(),
            elevation_min: -24f64.to_radians(),
            elevation_max: 14f64.to_radians(),
            max_range: 40.0,
            sensor_height: 1.8,
            range_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rng_seed: u64,
    /// Half-extents of the room along x and y, meters.
    pub extent: [f64; 2],
    pub wall_height: f64,
    /// Ground plus up to four walls.
    pub plane_count: usize,
    pub box_count: usize,
    /// Box edge lengths are drawn per axis from `[box_size_min, box_size_max]`.
    pub box_size_min: [f64; 3],
    pub box_size_max: [f64; 3],
    /// Foliage-like volumes returning scattered points from their interior.
    pub foliage_count: usize,
    pub foliage_radius: [f64; 2],
    /// Expected returns per meter of ray travel inside foliage.
    pub foliage_density: f64,
    /// Radius around the room center kept free of boxes and foliage.
    pub clearing: f64,
    /// Sensor poses along the scene trajectory and their spacing, meters.
    pub poses: usize,
    pub pose_spacing: f64,
    pub lidar: LidarSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            extent: [12.0, 9.0],
            wall_height: 4.0,
            plane_count: 5,
            box_count: 10,
            box_size_min: [0.5, 0.5, 0.4],
            box_size_max: [2.5, 2.5, 3.0],
            foliage_count: 0,
            foliage_radius: [0.8, 2.0],
            foliage_density: 1.5,
            clearing: 4.0,
            poses: 4,
            pose_spacing: 1.5,
            lidar: LidarSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lidar;
        let ok = self.extent.iter().all(|&e| e > 0.0)
            && self.wall_height > 0.0
            && (1..=5).contains(&self.plane_count)
            && (0..3).all(|i| self.box_size_min[i] > 0.0 && self.box_size_max[i] >= self.box_size_min[i])
            && self.foliage_radius[0] > 0.0
            && self.foliage_radius[1] >= self.foliage_radius[0]
            && self.foliage_density >= 0.0
            && self.clearing > 0.5
            && self.poses >= 1
            && self.pose_spacing > 0.0
            && l.vertical_angular_resolution > 0.0
            && l.horizontal_resolution > 0.0
            && l.elevation_max >= l.elevation_min
            && l.max_range > 0.0
            && l.sensor_height > 0.0
            && l.range_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid scene spec {self:?}")))
        }
    }

    /// Randomized layout, clutter, pose spacing and sensor noise, fully determined by
    /// `seed`. The clearing is widened to hold the whole trajectory.
    pub fn varied(seed: u64, poses: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c_e5ce_7e5a_17ed);
        let pose_spacing = rng.gen_range(1.0..3.0);
        let clearing = (pose_spacing * poses.saturating_sub(1) as f64 / 2.0 + 1.0).max(4.0);
        let ex = rng.gen_range(clearing + 4.0..clearing + 14.0);
        let ey = rng.gen_range(clearing + 3.0..clearing + 10.0);
        Self {
            rng_seed: seed,
            extent: [ex, ey],
            wall_height: rng.gen_range(2.5..6.0),
            plane_count: rng.gen_range(3..=5),
            box_count: rng.gen_range(3..=14),
            foliage_count: rng.gen_range(0..=6),
            foliage_density: rng.gen_range(0.5..3.0),
            clearing,
            poses,
            pose_spacing,
            lidar: LidarSpec { range_noise: rng.gen_range(0.01..0.05), ..LidarSpec::default() },
            ..Self::default()
        }
    }

    /// Sensor poses along the scene's own trajectory.
    pub fn trajectory(&self) -> Result<Vec<RigidTransform>> {
        scene_trajectory(self, self.poses, self.pose_spacing)
    }

    /// Elevation of every ring, lowest first.
    pub fn ring_elevations(&self) -> Vec<f64> {
        let l = &self.lidar;
        let rings = ((l.elevation_max - l.elevation_min) / l.vertical_angular_resolution + 1e-9).floor() as usize + 1;
        (0..rings).map(|r| l.elevation_min + r as f64 * l.vertical_angular_resolution).collect()
    }

    pub fn azimuth_count(&self) -> usize {
        (std::f64::consts::TAU / self.lidar.horizontal_resolution).round().max(1.0) as usize
    }
}

/// Surface primitives, all resting on or bounding the room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Axis-aligned rectangle on the plane `coord[axis] = offset`, bounded by `lo..hi`.
    Rect { axis: usize, offset: f64, lo: [f64; 3], hi: [f64; 3] },
    /// Box standing on the ground, rotated by `yaw` about its vertical center line.
    Box { center: [f64; 2], half: [f64; 3], yaw: f64 },
    /// Ball of semi-transparent clutter; a ray crossing a chord of length `L` returns
    /// from inside with probability `1 − exp(−density·L)`.
    Foliage { center: [f64; 3], radius: f64, density: f64 },
}

impl Primitive {
    /// Ray parameter of the first hit with `t > 1e-9`. Only foliage consumes randomness.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, rng: &mut impl Rng) -> Option<f64> {
        match *self {
            Primitive::Foliage { center, radius, density } => {
                let oc = o - Vector3::from(center);
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc <= 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                let (t_in, t_out) = ((-b - root).max(1e-6), -b + root);
                if t_out <= t_in {
                    return None;
                }
                // Exponential free path, truncated to the chord.
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let depth = -u.ln() / density.max(1e-12);
                (t_in + depth < t_out).then_some(t_in + depth)
            }
            Primitive::Rect { axis, offset, lo, hi } => {
                if d[axis].abs() < 1e-15 {
                    return None;
                }
                let t = (offset - o[axis]) / d[axis];
                if t <= 1e-9 {
                    return None;
                }
                let p = o + d * t;
                (0..3).all(|k| k == axis || (p[k] >= lo[k] && p[k] <= hi[k])).then_some(t)
            }
            Primitive::Box { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let to_local = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
                let lo = to_local(o - Vector3::new(center[0], center[1], half[2]));
                let ld = to_local(*d);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if ld[k].abs() < 1e-15 {
                        if lo[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[k] - lo[k]) / ld[k];
                    let b = (half[k] - lo[k]) / ld[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > 1e-9 {
                    Some(t0)
                } else if t1 > 1e-9 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Euclidean distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        match *self {
            Primitive::Foliage { center, radius, .. } => ((p.coords - Vector3::from(center)).norm() - radius).max(0.0),
            Primitive::Rect { axis, offset, lo, hi } => {
                let mut d2 = (p[axis] - offset).powi(2);
                for k in (0..3).filter(|&k| k != axis) {
                    let excess = (lo[k] - p[k]).max(p[k] - hi[k]).max(0.0);
                    d2 += excess * excess;
                }
                d2.sqrt()
            }
            Primitive::Box { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let v = p.coords - Vector3::new(center[0], center[1], half[2]);
                let q = Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
                let a = q.abs() - Vector3::from(half);
                let outside = a.map(|x| x.max(0.0)).norm();
                let inside = a.max().min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Radius around the room center kept free of boxes for sensor trajectories.
    pub clearing: f64,
}


impl Scene {
    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let [ex, ey] = spec.extent;
        let h = spec.wall_height;
        let mut primitives = vec![Primitive::Rect { axis: 2, offset: 0.0, lo: [-ex, -ey, 0.0], hi: [ex, ey, 0.0] }];
        let walls = [
            Primitive::Rect { axis: 0, offset: ex, lo: [ex, -ey, 0.0], hi: [ex, ey, h] },
            Primitive::Rect { axis: 1, offset: ey, lo: [-ex, ey, 0.0], hi: [ex, ey, h] },
            Primitive::Rect { axis: 0, offset: -ex, lo: [-ex, -ey, 0.0], hi: [-ex, ey, h] },
            Primitive::Rect { axis: 1, offset: -ey, lo: [-ex, -ey, 0.0], hi: [ex, -ey, h] },
        ];
        primitives.extend_from_slice(&walls[..spec.plane_count - 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.box_count && attempts < 1000 * (spec.box_count + 1) {
            attempts += 1;
            let half: [f64; 3] = std::array::from_fn(|k| 0.5 * rng.gen_range(spec.box_size_min[k]..=spec.box_size_max[k]));
            let cx = rng.gen_range(-ex..ex);
            let cy = rng.gen_range(-ey..ey);
            let yaw = rng.gen_range(0.0..std::f64::consts::PI);
            let radius = (half[0] * half[0] + half[1] * half[1]).sqrt();
            if (cx * cx + cy * cy).sqrt() - radius < spec.clearing || cx.abs() + radius > ex || cy.abs() + radius > ey {
                continue;
            }
            primitives.push(Primitive::Box { center: [cx, cy], half, yaw });
            placed += 1;
        }
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.foliage_count && attempts < 1000 * (spec.foliage_count + 1) {
            attempts += 1;
            let radius = rng.gen_range(spec.foliage_radius[0]..=spec.foliage_radius[1]);
            let cx = rng.gen_range(-ex..ex);
            let cy = rng.gen_range(-ey..ey);
            if (cx * cx + cy * cy).sqrt() - radius < spec.clearing || cx.abs() + radius > ex || cy.abs() + radius > ey {
                continue;
            }
            let cz = rng.gen_range(radius * 0.6..radius + 1.5);
            primitives.push(Primitive::Foliage { center: [cx, cy, cz], radius, density: spec.foliage_density });
            placed += 1;
        }
        Ok(Self { primitives, clearing: spec.clearing })
    }

    /// First hit along the ray, as `(t, primitive index)`.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>, rng: &mut impl Rng) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(o, d, rng).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn surface_distance(&self, p: &Point3) -> f64 {
        self.primitives.iter().map(|s| s.surface_distance(p)).fold(f64::INFINITY, f64::min)
    }
}

fn mix_seed(seed: u64, pose: &RigidTransform) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in pose.rotation_row_major().iter().chain(pose.translation().iter()) {
        h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3).rotate_left(29);
    }
    h
}

/// Ray-casts one revolution from `sensor_pose` (sensor in the scene frame).
///
/// Points are returned in the sensor frame, so the cloud's own sensor pose is the
/// identity. Range noise is drawn from a stream seeded by the scene seed and the pose.
pub fn generate_scene_scan(spec: &SceneSpec, sensor_pose: &RigidTransform) -> Result<PointCloud> {
    let scene = Scene::from_spec(spec)?;
    scan_scene(&scene, spec, sensor_pose)
}

pub fn scan_scene(scene: &Scene, spec: &SceneSpec, sensor_pose: &RigidTransform) -> Result<PointCloud> {
    let o = *sensor_pose.translation();
    let rot = *sensor_pose.rotation();
    let l = &spec.lidar;
    let noise = Normal::new(0.0, l.range_noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.rng_seed, sensor_pose));
    let azimuths = spec.azimuth_count();
    let mut points = Vec::new();
    for elev in spec.ring_elevations() {
        let (se, ce) = elev.sin_cos();
        for a in 0..azimuths {
            let az = a as f64 * std::f64::consts::TAU / azimuths as f64;
            let local = Vector3::new(ce * az.cos(), ce * az.sin(), se);
            let dir = rot * local;
            if let Some((t, _)) = scene.cast(&o, &dir, &mut rng) {
                if t <= l.max_range {
                    let r = if l.range_noise > 0.0 { (t + noise.sample(&mut rng)).max(1e-3) } else { t };
                    points.push(Point3::from(local * r));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyScan);
    }
    PointCloud::new(points, RigidTransform::identity(), l.vertical_angular_resolution)
}

/// Sensor poses along a straight drive through the room center, `step` meters apart,
/// kept inside the box-free clearing. Heading and small yaw jitter come from the scene seed.
pub fn scene_trajectory(spec: &SceneSpec, count: usize, step: f64) -> Result<Vec<RigidTransform>> {
    spec.validate()?;
    let length = step * count.saturating_sub(1) as f64;
    if length / 2.0 >= spec.clearing - 0.5 {
        return Err(Error::InvalidParams(format!("trajectory of {length} m exceeds the clearing")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0x5eed_7a11);
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(heading.cos(), heading.sin(), 0.0);
    Ok((0..count)
        .map(|i| {
            let s = -length / 2.0 + i as f64 * step;
            let pos = dir * s + Vector3::new(0.0, 0.0, spec.lidar.sensor_height);
            let yaw = heading + rng.gen_range(-0.1..0.1);
            RigidTransform::from_yaw_translation(yaw, pos)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(spec: SceneSpec) -> SceneSpec {
        SceneSpec { lidar: LidarSpec { range_noise: 0.0, ..spec.lidar }, ..spec }
    }

    #[test]
    fn closed_room_catches_every_downward_ray() {
        let spec = quiet(SceneSpec { box_count: 0, ..Default::default() });
        let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, spec.lidar.sensor_height));
        let cloud = generate_scene_scan(&spec, &pose).unwrap();
        let below = spec.ring_elevations().iter().filter(|&&e| e < 0.0).count() * spec.azimuth_count();
        let scene = Scene::from_spec(&spec).unwrap();
        let mut emitted_hits = 0;
        for elev in spec.ring_elevations() {
            for a in 0..spec.azimuth_count() {
                let az = a as f64 * std::f64::consts::TAU / spec.azimuth_count() as f64;
                let d = Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
                let hit = scene.cast(pose.translation(), &d, &mut ChaCha8Rng::seed_from_u64(0)).filter(|h| h.0 <= spec.lidar.max_range);
                if elev < 0.0 {
                    assert!(hit.is_some());
                }
                emitted_hits += hit.is_some() as usize;
            }
        }
        assert_eq!(cloud.len(), emitted_hits);
        assert!(cloud.len() >= below);
    }

    #[test]
    fn doubling_alpha_halves_rings() {
        let spec = SceneSpec::default();
        let doubled = SceneSpec {
            lidar: LidarSpec { vertical_angular_resolution: 2.0 * spec.lidar.vertical_angular_resolution, ..spec.lidar },
            ..spec
        };
        let (a, b) = (spec.ring_elevations().len(), doubled.ring_elevations().len());
        assert!((a as i64 - 2 * b as i64).abs() <= 1, "{a} vs {b}");
    }

    #[test]
    fn points_lie_on_primitive_surfaces() {
        for seed in 0..3 {
            let spec = quiet(SceneSpec { rng_seed: seed, ..Default::default() });
            let scene = Scene::from_spec(&spec).unwrap();
            assert!(scene.primitives.len() > 5);
            for pose in scene_trajectory(&spec, 4, 1.5).unwrap() {
                let cloud = generate_scene_scan(&spec, &pose).unwrap();
                for p in &cloud.points {
                    let world = pose.apply(p);
                    assert!(scene.surface_distance(&world) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn scans_are_deterministic_and_noise_depends_on_pose() {
        let spec = SceneSpec { rng_seed: 4, ..Default::default() };
        let poses = scene_trajectory(&spec, 3, 1.0).unwrap();
        assert_eq!(generate_scene_scan(&spec, &poses[0]).unwrap(), generate_scene_scan(&spec, &poses[0]).unwrap());
        assert_ne!(generate_scene_scan(&spec, &poses[0]).unwrap(), generate_scene_scan(&spec, &poses[1]).unwrap());
    }

    #[test]
    fn empty_scan_is_an_error() {
        let spec = SceneSpec { plane_count: 1, box_count: 0, ..Default::default() };
        let spec = SceneSpec { lidar: LidarSpec { elevation_min: 0.1, elevation_max: 0.3, ..spec.lidar }, ..spec };
        let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert!(matches!(generate_scene_scan(&spec, &pose), Err(Error::EmptyScan)));
    }

    #[test]
    fn foliage_returns_lie_inside_the_volume() {
        let spec = quiet(SceneSpec { rng_seed: 5, foliage_count: 6, ..Default::default() });
        let scene = Scene::from_spec(&spec).unwrap();
        assert!(scene.primitives.iter().any(|p| matches!(p, Primitive::Foliage { .. })));
        let pose = scene_trajectory(&spec, 1, 1.0).unwrap()[0];
        let cloud = generate_scene_scan(&spec, &pose).unwrap();
        for p in &cloud.points {
            assert!(scene.surface_distance(&pose.apply(p)) < 1e-9);
        }
    }

    #[test]
    fn varied_specs_are_valid_and_deterministic() {
        for seed in 0..30 {
            let spec = SceneSpec::varied(seed, 5);
            assert_eq!(spec, SceneSpec::varied(seed, 5));
            let poses = spec.trajectory().unwrap();
            assert_eq!(poses.len(), 5);
            assert!(Scene::from_spec(&spec).is_ok());
        }
        assert_ne!(SceneSpec::varied(1, 4), SceneSpec::varied(2, 4));
    }

    #[test]
    fn box_distance_is_zero_on_faces() {
        let b = Primitive::Box { center: [1.0, 2.0], half: [0.5, 1.0, 1.5], yaw: 0.7 };
        let o = Vector3::new(-5.0, 2.0, 1.0);
        let d = Vector3::new(1.0, 0.0, 0.0);
        let t = b.intersect(&o, &d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b.surface_distance(&Point3::from(o + d * t)) < 1e-12);
        assert!((b.surface_distance(&Point3::new(1.0, 2.0, 1.5)) - 0.5).abs() < 1e-12);
    }
}
