//! Python bindings: scenes, CSI simulation, trained models, multilateration
//! and the Monte-Carlo sweeps.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iccl_core::baselines::{self, FingerprintStore, NfplParams, Representation};
use iccl_core::harness::{self, Environment, ExperimentConfig};
use iccl_core::multilateration::{self, RefineOptions};
use iccl_core::propagation::{self, ChannelModel, CsiVector};
use iccl_core::regressor::{checkpoint, Record, RegressorParams};
use iccl_core::scene::{self, Point2, Point3, SceneGenerator};
use iccl_core::{dataset, scenefile, stats, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        Error::TrainingDiverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn csi(gains: Vec<f64>) -> PyResult<CsiVector> {
    CsiVector::new(gains).map_err(py_err)
}

/// Urban scene of axis-aligned buildings.
#[pyclass(module = "iccl", frozen)]
struct Scene {
    inner: scene::Scene,
}

#[pymethods]
impl Scene {
    /// Random scene from the default generator.
    #[staticmethod]
    #[pyo3(signature = (seed, n_buildings = 8))]
    fn generate(seed: u64, n_buildings: usize) -> PyResult<Self> {
        let inner = SceneGenerator { n_buildings, ..SceneGenerator::default() }.generate(seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: scenefile::load(&path).map_err(py_err)?.0 })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        scenefile::save(&path, &self.inner, None).map_err(py_err)
    }

    #[getter]
    fn extent(&self) -> (f64, f64) {
        self.inner.extent()
    }

    /// `(min_xyz, max_xyz, attenuation_db_per_m)` per building.
    #[getter]
    fn buildings(&self) -> Vec<([f64; 3], [f64; 3], f64)> {
        self.inner.buildings().iter().map(|b| (b.min_corner().into(), b.max_corner().into(), b.attenuation())).collect()
    }

    fn hash(&self) -> String {
        scenefile::scene_hash(&self.inner)
    }

    /// `count` uniform positions on free ground.
    fn sample_positions(&self, count: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        let pos = scene::sample_ground_positions(&self.inner, count, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(pos.iter().map(|p| (p.x, p.y)).collect())
    }

    fn __repr__(&self) -> String {
        let (w, d) = self.inner.extent();
        format!("Scene({w} x {d} m, {} buildings)", self.inner.buildings().len())
    }
}

/// UAV waypoints.
#[pyclass(module = "iccl", frozen)]
struct Trajectory {
    inner: scene::Trajectory,
}

#[pymethods]
impl Trajectory {
    #[new]
    fn new(waypoints: Vec<[f64; 3]>) -> PyResult<Self> {
        let inner = scene::Trajectory::new(waypoints.into_iter().map(Point3::from).collect()).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Horizontal circle; waypoint 0 sits on the +x side, then counter-clockwise.
    #[staticmethod]
    #[pyo3(signature = (center = [40.0, 45.0, 40.0], radius = 20.0, n_waypoints = 128))]
    fn circle(center: [f64; 3], radius: f64, n_waypoints: usize) -> PyResult<Self> {
        let inner = scene::build_circular_trajectory(Point3::from(center), radius, n_waypoints).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn waypoints(&self) -> Vec<[f64; 3]> {
        self.inner.waypoints().iter().map(|w| (*w).into()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Path loss, shadowing and pilot parameters.
#[pyclass(module = "iccl", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct Channel {
    reference_gain_db: f64,
    pathloss_exponent: f64,
    noise_power: f64,
    tx_power_dbm: f64,
    n_pilot_symbols: usize,
}

impl Channel {
    fn model(&self) -> PyResult<ChannelModel> {
        let m = ChannelModel {
            reference_gain_db: self.reference_gain_db,
            pathloss_exponent: self.pathloss_exponent,
            noise_power: self.noise_power,
            tx_power_dbm: self.tx_power_dbm,
            n_pilot_symbols: self.n_pilot_symbols,
        };
        m.validate().map_err(py_err)?;
        Ok(m)
    }
}

#[pymethods]
impl Channel {
    #[new]
    #[pyo3(signature = (noise_power = 0.0, reference_gain_db = -40.0, pathloss_exponent = 2.0, tx_power_dbm = 30.0, n_pilot_symbols = 16))]
    fn new(
        noise_power: f64,
        reference_gain_db: f64,
        pathloss_exponent: f64,
        tx_power_dbm: f64,
        n_pilot_symbols: usize,
    ) -> PyResult<Self> {
        let c = Self { reference_gain_db, pathloss_exponent, noise_power, tx_power_dbm, n_pilot_symbols };
        c.model()?;
        Ok(c)
    }

    /// Noise-free gains from every waypoint to the ground point `(x, y)`.
    fn true_gains(&self, scene: &Scene, trajectory: &Trajectory, x: f64, y: f64) -> PyResult<Vec<f64>> {
        propagation::true_gains(&scene.inner, &self.model()?, &trajectory.inner, &Point3::new(x, y, 0.0)).map_err(py_err)
    }

    /// Noisy gain estimates at `(x, y)`.
    fn measure(&self, scene: &Scene, trajectory: &Trajectory, x: f64, y: f64, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = propagation::measure_csi(&scene.inner, &self.model()?, &trajectory.inner, &Point3::new(x, y, 0.0), &mut rng)
            .map_err(py_err)?;
        Ok(v.gains().to_vec())
    }
}

/// Length (m) of the segment `p0 -> p1` strictly inside the box `[lo, hi]`.
#[pyfunction]
fn ray_box_interior_length(p0: [f64; 3], p1: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> PyResult<f64> {
    let b = scene::Building::new(Point3::from(lo), Point3::from(hi), 1.0).map_err(py_err)?;
    Ok(propagation::ray_box_interior_length(&Point3::from(p0), &Point3::from(p1), &b))
}

/// Position from anchor ranges; Gauss-Newton refinement unless `refine=False`.
#[pyfunction]
#[pyo3(signature = (anchors, distances, refine = true))]
fn locate(anchors: Vec<(f64, f64)>, distances: Vec<f64>, refine: bool) -> PyResult<(f64, f64)> {
    let a: Vec<Point2> = anchors.iter().map(|&(x, y)| Point2::new(x, y)).collect();
    let est = multilateration::locate(&a, &distances, refine.then(RefineOptions::default)).map_err(py_err)?;
    Ok((est.position.x, est.position.y))
}

/// Root mean squared Euclidean error.
#[pyfunction]
fn rmse(estimates: Vec<(f64, f64)>, truths: Vec<(f64, f64)>) -> PyResult<f64> {
    let conv = |v: Vec<(f64, f64)>| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect::<Vec<_>>();
    harness::rmse(&conv(estimates), &conv(truths)).map_err(py_err)
}

/// One-sided Mann-Kendall p-value for a decreasing series.
#[pyfunction]
fn mann_kendall_decreasing(series: Vec<f64>) -> PyResult<f64> {
    stats::mann_kendall_decreasing(&series).map_err(py_err)
}

/// Trained pairwise distance regressor.
#[pyclass(module = "iccl", frozen)]
struct DistanceModel {
    inner: RegressorParams,
}

#[pymethods]
impl DistanceModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let model = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner: RegressorParams::from_model(model).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(self.inner.model(), &path).map_err(py_err)
    }

    #[getter]
    fn n_waypoints(&self) -> usize {
        self.inner.n_waypoints()
    }

    /// Symmetric distance estimate in meters.
    fn predict_distance(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_distance(&csi(a)?, &csi(b)?).map_err(py_err)
    }
}

/// Trained direct position regressor.
#[pyclass(module = "iccl", frozen)]
struct PositionModel {
    inner: NfplParams,
}

#[pymethods]
impl PositionModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let model = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner: NfplParams::from_model(model).map_err(py_err)? })
    }

    fn locate(&self, gains: Vec<f64>) -> PyResult<(f64, f64)> {
        let p = baselines::nfpl_locate(&self.inner, &csi(gains)?).map_err(py_err)?;
        Ok((p.x, p.y))
    }
}

/// Nearest-neighbour fingerprint database on plain linear gains.
#[pyclass(module = "iccl", frozen)]
struct Fingerprints {
    inner: FingerprintStore,
}

#[pymethods]
impl Fingerprints {
    #[new]
    fn new(gains: Vec<Vec<f64>>, positions: Vec<(f64, f64)>) -> PyResult<Self> {
        if gains.len() != positions.len() {
            return Err(PyValueError::new_err("gains and positions differ in length"));
        }
        let records = gains
            .into_iter()
            .zip(positions)
            .map(|(g, (x, y))| Ok(Record { csi: csi(g)?, position: Point2::new(x, y) }))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: FingerprintStore::new(&records, Representation::Raw).map_err(py_err)? })
    }

    fn locate(&self, gains: Vec<f64>) -> PyResult<(f64, f64)> {
        let p = baselines::dfpl_locate(&self.inner, &csi(gains)?).map_err(py_err)?;
        Ok((p.x, p.y))
    }
}

/// Reads a CSV or binary CSI dataset into `(gains, positions)`.
#[pyfunction]
fn read_dataset(path: PathBuf) -> PyResult<(Vec<Vec<f64>>, Vec<(f64, f64)>)> {
    let ds = dataset::CsiDataset::read(&path).map_err(py_err)?;
    Ok((
        ds.records.iter().map(|r| r.csi.gains().to_vec()).collect(),
        ds.records.iter().map(|r| (r.position.x, r.position.y)).collect(),
    ))
}

/// Default experiment configuration as TOML text.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_toml()
}

/// Runs a sweep (`"anchors"` or `"noise"`) and returns its rows as dicts.
///
/// Models are trained in-run unless both checkpoint paths are given; the
/// optional `out` path receives the CSV and plot-data files.
#[pyfunction]
#[pyo3(signature = (config_toml, sweep, seed, model = None, nfpl = None, out = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config_toml: &str,
    sweep: &str,
    seed: u64,
    model: Option<PathBuf>,
    nfpl: Option<PathBuf>,
    out: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut config = ExperimentConfig::from_toml(config_toml).map_err(PyValueError::new_err)?;
    config.seed = seed;
    let results = py
        .detach(|| -> iccl_core::Result<_> {
            let env = Environment::from_config(&config)?;
            let (pre, fine) = harness::generate_training_data(&config, &env)?;
            let models = match (&model, &nfpl) {
                (Some(m), Some(n)) => harness::TrainedModels {
                    iccl: RegressorParams::from_model(checkpoint::load(m)?)?,
                    nfpl: NfplParams::from_model(checkpoint::load(n)?)?,
                    fingerprints: fine.records,
                },
                _ => harness::train_models(&config, &pre, &fine, |_, _, _| {})?,
            };
            let res = match sweep {
                "anchors" => harness::sweep_anchors(&config, &env, &models)?,
                "noise" => harness::sweep_noise(&config, &env, &models)?,
                other => return Err(Error::InvalidArgument(format!("unknown sweep '{other}'"))),
            };
            if let Some(path) = &out {
                harness::emit_results(&res, path)?;
            }
            Ok(res)
        })
        .map_err(py_err)?;
    results
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("algorithm", r.algorithm.name())?;
            d.set_item("m_a", r.m_a)?;
            d.set_item("noise_power_dbm", r.noise_power_dbm())?;
            d.set_item("rmse_m", r.rmse_m)?;
            d.set_item("stderr_m", r.stderr_m)?;
            d.set_item("n_realizations", r.n_realizations)?;
            d.set_item("failure_rate", r.failure_rate)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn iccl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Channel>()?;
    m.add_class::<DistanceModel>()?;
    m.add_class::<PositionModel>()?;
    m.add_class::<Fingerprints>()?;
    m.add_function(wrap_pyfunction!(ray_box_interior_length, m)?)?;
    m.add_function(wrap_pyfunction!(locate, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mann_kendall_decreasing, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
