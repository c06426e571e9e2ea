//! Python bindings. Points are sequences of `[x, y, z]`, transforms are 4×4 nested lists.

use std::path::PathBuf;

use misalign_core::features::{extract_features as core_extract, local_diff_entropy as core_entropy, FeatureConfig, FeatureMap, FEATURE_DIM};
use misalign_core::features::sinkhorn::{sinkhorn_divergence as core_divergence, Measure, SinkhornParams};
use misalign_core::geometry::transformation_error as core_epsilon;
use misalign_core::metrics;
use misalign_core::models::{self, ClassDistribution, MlpParams, OneHotLabel};
use misalign_core::preprocess::{hidden_point_removal_points, DEFAULT_FLIP_RADIUS_FACTOR};
use misalign_core::{Error, Point3, PointCloud, RegisteredPair, RigidTransform};
use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_points(raw: Vec<[f64; 3]>) -> Vec<Point3> {
    raw.into_iter().map(|[x, y, z]| Point3::new(x, y, z)).collect()
}

fn transform(m: Vec<Vec<f64>>) -> PyResult<RigidTransform> {
    if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
        return Err(PyValueError::new_err("transform must be a 4x4 nested list"));
    }
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(PyValueError::new_err("last transform row must be [0, 0, 0, 1]"));
    }
    let r = Matrix3::from_fn(|i, j| m[i][j]);
    let t = Vector3::new(m[0][3], m[1][3], m[2][3]);
    RigidTransform::new(r, t).map_err(to_py)
}

fn cloud(raw: Vec<[f64; 3]>, vertical_angular_resolution: f64) -> PyResult<PointCloud> {
    PointCloud::new(to_points(raw), RigidTransform::identity(), vertical_angular_resolution).map_err(to_py)
}

fn distribution(probs: Vec<f64>) -> PyResult<ClassDistribution> {
    ClassDistribution::new(probs).map_err(to_py)
}

fn one_hot(k: usize, m: usize) -> PyResult<OneHotLabel> {
    OneHotLabel::new(k, m).map_err(to_py)
}

/// Mean displacement between the cloud mapped by `gt` and by `est`.
#[pyfunction]
fn transformation_error(gt: Vec<Vec<f64>>, est: Vec<Vec<f64>>, points: Vec<[f64; 3]>) -> PyResult<f64> {
    core_epsilon(&transform(gt)?, &transform(est)?, &cloud(points, 1.0)?).map_err(to_py)
}

#[pyfunction]
fn chamfer(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::chamfer(&to_points(a), &to_points(b)).map_err(to_py)
}

#[pyfunction]
fn hausdorff(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::hausdorff(&to_points(a), &to_points(b)).map_err(to_py)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&x, &y).map_err(to_py)
}

/// Debiased divergence between uniform measures; returns `(value, raw)`.
#[pyfunction]
#[pyo3(signature = (a, b, epsilon = 0.01, max_iters = 200, tolerance = 1e-6))]
fn sinkhorn_divergence(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>, epsilon: f64, max_iters: usize, tolerance: f64) -> PyResult<(f64, f64)> {
    let params = SinkhornParams { epsilon_reg: epsilon, max_iters, tolerance };
    let d = core_divergence(&Measure::uniform(to_points(a)), &Measure::uniform(to_points(b)), &params).map_err(to_py)?;
    Ok((d.value, d.raw))
}

/// Gaussian differential entropy of the points' covariance; `None` below the minimum count.
#[pyfunction]
fn local_diff_entropy(points: Vec<[f64; 3]>) -> Option<f64> {
    core_entropy(&to_points(points))
}

/// Visibility mask of the points as seen from `viewpoint`.
#[pyfunction]
#[pyo3(signature = (points, viewpoint, flip_radius_factor = DEFAULT_FLIP_RADIUS_FACTOR))]
fn hidden_point_removal(points: Vec<[f64; 3]>, viewpoint: [f64; 3], flip_radius_factor: f64) -> PyResult<Vec<bool>> {
    let [x, y, z] = viewpoint;
    Ok(hidden_point_removal_points(&to_points(points), &Point3::new(x, y, z), flip_radius_factor).map_err(to_py)?.visible)
}

#[pyfunction]
fn cross_entropy(label: usize, probs: Vec<f64>) -> PyResult<f64> {
    let p = distribution(probs)?;
    Ok(models::cross_entropy(&one_hot(label, p.probs().len())?, &p))
}

#[pyfunction]
fn wasserstein1(label: usize, probs: Vec<f64>) -> PyResult<f64> {
    let p = distribution(probs)?;
    Ok(models::wasserstein1(&one_hot(label, p.probs().len())?, &p))
}

#[pyfunction]
fn combined_loss(label: usize, probs: Vec<f64>) -> PyResult<f64> {
    let p = distribution(probs)?;
    Ok(models::combined_loss(&one_hot(label, p.probs().len())?, &p))
}

#[pyfunction]
fn xi_rates(pred: Vec<usize>, truth: Vec<usize>, classes: usize) -> PyResult<Vec<f64>> {
    metrics::xi_rates(&pred, &truth, classes).map_err(to_py)
}

#[pyfunction]
fn binary_accuracy(pred: Vec<usize>, truth: Vec<usize>, classes: (usize, usize)) -> PyResult<f64> {
    metrics::binary_accuracy(&pred, &truth, classes).map_err(to_py)
}

/// Per-point features of a registered pair with their common-frame coordinates.
#[pyclass(name = "FeatureMap", frozen)]
struct PyFeatureMap(FeatureMap);

#[pymethods]
impl PyFeatureMap {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        FeatureMap::load(&path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn label(&self) -> u32 {
        self.0.label
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f32>> {
        self.0.features.chunks(FEATURE_DIM).map(<[f32]>::to_vec).collect()
    }

    #[getter]
    fn coords(&self) -> Vec<[f32; 3]> {
        self.0.coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

/// Feature map of a registered pair. Both clouds are given in their sensor frames.
#[pyfunction]
#[pyo3(signature = (cloud0, cloud1, gt, est, label = 0, fps_count = 1024, max_sinkhorn_atoms = 64, vertical_angular_resolution = 2f64.to_radians()))]
#[allow(clippy::too_many_arguments)]
fn extract_features(
    cloud0: Vec<[f64; 3]>,
    cloud1: Vec<[f64; 3]>,
    gt: Vec<Vec<f64>>,
    est: Vec<Vec<f64>>,
    label: usize,
    fps_count: usize,
    max_sinkhorn_atoms: usize,
    vertical_angular_resolution: f64,
) -> PyResult<PyFeatureMap> {
    let pair = RegisteredPair::new(
        cloud(cloud0, vertical_angular_resolution)?,
        cloud(cloud1, vertical_angular_resolution)?,
        transform(gt)?,
        transform(est)?,
        label,
    )
    .map_err(to_py)?;
    let config = FeatureConfig { fps_count, max_sinkhorn_atoms, ..Default::default() };
    core_extract(&pair, &config).map(PyFeatureMap).map_err(to_py)
}

/// A trained classifier loaded from its binary file.
#[pyclass(name = "Model", frozen)]
struct PyModel(MlpParams);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        MlpParams::load(&path).map(Self).map_err(to_py)
    }

    /// Class probabilities for one feature map.
    fn predict_proba(&self, feature_map: &PyFeatureMap) -> Vec<f64> {
        models::predict(&self.0, &feature_map.0).probs().to_vec()
    }

    fn predict(&self, feature_map: &PyFeatureMap) -> usize {
        models::predict(&self.0, &feature_map.0).argmax()
    }
}

#[pymodule]
fn misalign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(transformation_error, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(local_diff_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(hidden_point_removal, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(xi_rates, m)?)?;
    m.add_function(wrap_pyfunction!(binary_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
