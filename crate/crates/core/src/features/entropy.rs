//! Gaussian differential entropy of local neighborhoods and the pairwise aggregate entropies.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::preprocess::{CommonFrame, Neighborhoods};

/// Smallest neighborhood whose entropy is defined.
pub const MIN_NEIGHBORHOOD: usize = 5;
/// Diagonal covariance regularization, m².
pub const COVARIANCE_REG: f64 = 1e-6;

/// Sample covariance (divisor n − 1) of the selected points.
pub fn sample_covariance<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count();
    if n < 2 {
        return None;
    }
    let mean = points.clone().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n as f64;
    let scatter = points.fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    });
    Some(scatter / (n - 1) as f64)
}

/// `0.5·ln((2πe)³·det(Σ + λI))`, or `None` below [`MIN_NEIGHBORHOOD`] members.
pub fn local_diff_entropy(members: &[Point3]) -> Option<f64> {
    entropy_of(members.iter())
}

pub fn entropy_of<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> Option<f64> {
    if points.clone().count() < MIN_NEIGHBORHOOD {
        return None;
    }
    let cov = sample_covariance(points)? + Matrix3::identity() * COVARIANCE_REG;
    Some(gaussian_entropy(&cov))
}

pub fn gaussian_entropy(cov: &Matrix3<f64>) -> f64 {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    0.5 * (two_pi_e.powi(3) * cov.determinant()).ln()
}

/// Aggregate pair entropies `(H_joint, H_sep)` from one neighborhood per point.
///
/// Undefined local entropies are skipped in the sums; both sums are normalized by the
/// full joint cardinality.
pub fn coral_pair_features(frame: &CommonFrame, neighborhoods: &Neighborhoods) -> Result<(f64, f64)> {
    let n0 = frame.len(0);
    let joint_point = |i: usize| if i < n0 { &frame.points[0][i] } else { &frame.points[1][i - n0] };
    let mut defined = 0usize;
    let mut sep_total = 0.0;
    for nb in &neighborhoods.separate {
        if let Some(h) = entropy_of(nb.member_indices.iter().map(|&i| &frame.points[nb.cloud][i])) {
            sep_total += h;
            defined += 1;
        }
    }
    let mut joint_total = 0.0;
    for nb in &neighborhoods.joint {
        if let Some(h) = entropy_of(nb.member_indices.iter().map(|&i| joint_point(i))) {
            joint_total += h;
            defined += 1;
        }
    }
    if defined == 0 {
        return Err(Error::NoValidNeighborhoods);
    }
    let total = frame.joint_len() as f64;
    Ok((joint_total / total, sep_total / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const IDENTITY_ENTROPY: f64 = 4.2568155996140185;

    /// Points whose sample covariance is exactly `scale²·I`: ±s·√((n−1)/2) along each axis.
    fn axis_cross(scale: f64) -> Vec<Point3> {
        // 6 points, mean zero; per-axis sum of squares 2a² = (n − 1)·scale² = 5 scale².
        let a = scale * (2.5f64).sqrt();
        vec![
            Point3::new(a, 0.0, 0.0),
            Point3::new(-a, 0.0, 0.0),
            Point3::new(0.0, a, 0.0),
            Point3::new(0.0, -a, 0.0),
            Point3::new(0.0, 0.0, a),
            Point3::new(0.0, 0.0, -a),
        ]
    }

    #[test]
    fn identity_covariance_value() {
        assert!((1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() - IDENTITY_ENTROPY).abs() < 1e-12);
        // Choose the spread so that Σ + λI = I exactly up to rounding.
        let pts = axis_cross((1.0 - COVARIANCE_REG).sqrt());
        let h = local_diff_entropy(&pts).unwrap();
        assert!((h - IDENTITY_ENTROPY).abs() < 1e-9, "{h}");
    }

    #[test]
    fn too_few_members_is_undefined() {
        assert_eq!(local_diff_entropy(&axis_cross(1.0)[..4]), None);
    }

    #[test]
    fn scaling_adds_three_log_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..30)
            .map(|_| Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)))
            .collect();
        let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
        let h = local_diff_entropy(&pts).unwrap();
        for s in [2.0, 10.0] {
            let scaled: Vec<Point3> = pts.iter().map(|p| Point3::from(mean + (p.coords - mean) * s)).collect();
            let hs = local_diff_entropy(&scaled).unwrap();
            assert!((hs - h - 3.0 * f64::ln(s)).abs() < 1e-4, "s = {s}");
        }
    }

    #[test]
    fn collinear_points_match_eigenvalue_oracle() {
        let pts: Vec<Point3> = (0..5).map(|i| Point3::new(0.25 * i as f64, 0.0, 0.0)).collect();
        let cov = sample_covariance(pts.iter()).unwrap();
        let eig = SymmetricEigen::new(cov).eigenvalues;
        let det: f64 = eig.iter().map(|l| l + COVARIANCE_REG).product();
        let expect = 0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(3) * det).ln();
        // σ̂² along the line: positions 0..1 step 0.25, mean 0.5 → Σ(x−μ)²/(n−1) = 0.625/4.
        let sigma2 = 0.625 / 4.0;
        let closed = 0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(3) * COVARIANCE_REG.powi(2) * (sigma2 + COVARIANCE_REG)).ln();
        let h = local_diff_entropy(&pts).unwrap();
        assert!((h - expect).abs() < 1e-9);
        assert!((h - closed).abs() < 1e-9);
    }

    #[test]
    fn entropy_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let pts: Vec<Point3> = (0..12)
                .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let t = crate::geometry::RigidTransform::from_axis_angle(
                &Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0),
                rng.gen_range(-3.0..3.0),
            )
            .compose(&crate::geometry::RigidTransform::from_translation(Vector3::new(5.0, -2.0, 9.0)));
            let moved: Vec<Point3> = pts.iter().map(|p| t.apply(p)).collect();
            assert!((local_diff_entropy(&pts).unwrap() - local_diff_entropy(&moved).unwrap()).abs() < 1e-9);
        }
    }
}
