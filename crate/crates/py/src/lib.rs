//! Python bindings: scene simulation, estimation and experiment runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use reflector::acoustic::ImpulseResponseSet;
use reflector::experiments::{measure, run_experiment_1, run_experiment_2, run_experiment_3, ExperimentConfig};
use reflector::geometry::{Plane, Vec3};
use reflector::lidar::{cast_cloud, PointCloud};
use reflector::pipeline::Method;
use reflector::plane_detect::{detect_planes as detect, DetectedPlane};

fn err(e: reflector::Error) -> PyErr {
    match e {
        reflector::Error::InvalidArgument(_) | reflector::Error::PriorOutOfRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load_config(toml: Option<&str>) -> PyResult<ExperimentConfig> {
    let cfg = match toml {
        Some(t) => ExperimentConfig::from_toml_str(t).map_err(err)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn scene_planes(walls: &[(f64, f64)], floor_depth: Option<f64>) -> PyResult<Vec<Plane>> {
    let mut planes: Vec<Plane> = walls
        .iter()
        .map(|&(az, d)| Plane::wall(az.to_radians(), d))
        .collect::<reflector::Result<_>>()
        .map_err(err)?;
    if let Some(d) = floor_depth {
        planes.push(Plane::floor(d).map_err(err)?);
    }
    Ok(planes)
}

fn plane_dict<'py>(py: Python<'py>, p: &DetectedPlane) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let n = p.plane.normal();
    d.set_item("normal", (n.x, n.y, n.z))?;
    d.set_item("distance", p.plane.distance())?;
    d.set_item("inliers", p.inlier_count)?;
    Ok(d)
}

/// Estimator built from an experiment config (TOML text, defaults if omitted).
#[pyclass(name = "Estimator")]
struct PyEstimator {
    cfg: ExperimentConfig,
    inner: reflector::pipeline::Estimator,
}

#[pymethods]
impl PyEstimator {
    #[new]
    #[pyo3(signature = (config_toml=None))]
    fn new(config_toml: Option<&str>) -> PyResult<Self> {
        let cfg = load_config(config_toml)?;
        let inner = reflector::pipeline::Estimator::new(
            &cfg.grid().map_err(err)?,
            &cfg.system_pose().map_err(err)?,
            &cfg.scene.directivity,
            &cfg.acoustic_params(),
            cfg.acoustics.n_samples,
            cfg.estimator.clone(),
        )
        .map_err(err)?;
        Ok(PyEstimator { cfg, inner })
    }

    /// Direct-path-free RIR of walls `(azimuth_deg, distance)` and an optional
    /// floor, as one list of samples per microphone.
    #[pyo3(signature = (walls, floor_depth=None, snr_db=f64::INFINITY, seed=0))]
    fn simulate(
        &self,
        walls: Vec<(f64, f64)>,
        floor_depth: Option<f64>,
        snr_db: f64,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let planes = scene_planes(&walls, floor_depth)?;
        let h = measure(
            &planes,
            &self.cfg.system_pose().map_err(err)?,
            &self.cfg.scene.directivity,
            &self.cfg.acoustic_params(),
            self.cfg.acoustics.n_samples,
            snr_db,
            seed,
        )
        .map_err(err)?;
        Ok((0..h.n_channels()).map(|m| h.channel(m).to_vec()).collect())
    }

    /// LiDAR points of the same scene with the config's `[scene.lidar]`.
    #[pyo3(signature = (walls, floor_depth=None))]
    fn scan(&self, walls: Vec<(f64, f64)>, floor_depth: Option<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let planes = scene_planes(&walls, floor_depth)?;
        let cloud = cast_cloud(&planes, &self.cfg.scene.lidar).map_err(err)?;
        Ok(cloud.points.iter().map(|p| (p.x, p.y, p.z)).collect())
    }

    /// Detected reflectors as dicts with `radius`, `azimuth_deg` and
    /// `magnitude`. `method` is `"baseline"` or `"proposed"`.
    #[pyo3(signature = (rir, cloud=None, method="proposed"))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        rir: Vec<Vec<f64>>,
        cloud: Option<Vec<(f64, f64, f64)>>,
        method: &str,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let method = match method {
            "baseline" => Method::Baseline,
            "proposed" => Method::Proposed,
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        };
        let n = rir.first().map_or(0, Vec::len);
        if rir.iter().any(|c| c.len() != n) {
            return Err(PyValueError::new_err("all channels must have the same length"));
        }
        let h = ImpulseResponseSet::from_stacked(rir.concat(), n, self.cfg.acoustics.sample_rate).map_err(err)?;
        let cloud = cloud.map(|pts| PointCloud::new(pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect()));
        let r = py
            .detach(|| self.inner.estimate(&h, cloud.as_ref(), method))
            .map_err(err)?;
        r.detections
            .iter()
            .map(|d| {
                let out = PyDict::new(py);
                out.set_item("radius", d.peak.radius)?;
                out.set_item("azimuth_deg", d.peak.azimuth.to_degrees())?;
                out.set_item("magnitude", d.peak.magnitude)?;
                Ok(out)
            })
            .collect()
    }
}

/// Planes found in a list of `(x, y, z)` points.
#[pyfunction]
#[pyo3(signature = (points, config_toml=None))]
fn detect_planes<'py>(
    py: Python<'py>,
    points: Vec<(f64, f64, f64)>,
    config_toml: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = load_config(config_toml)?;
    let cloud = PointCloud::new(points.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect());
    let planes = py.detach(|| detect(&cloud, &cfg.estimator.detector)).map_err(err)?;
    planes.iter().map(|p| plane_dict(py, p)).collect()
}

/// Runs `"exp1"`, `"exp2"` or `"exp3"` and returns the result CSV text.
#[pyfunction]
#[pyo3(signature = (kind, config_toml=None))]
fn run_experiment(py: Python<'_>, kind: &str, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = load_config(config_toml)?;
    let run = match kind {
        "exp1" => run_experiment_1,
        "exp2" => run_experiment_2,
        "exp3" => run_experiment_3,
        other => return Err(PyValueError::new_err(format!("unknown experiment {other:?}"))),
    };
    let out = py.detach(|| run(&cfg)).map_err(err)?;
    out.table.to_csv_string().map_err(err)
}

#[pymodule]
fn reflector_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(detect_planes, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
