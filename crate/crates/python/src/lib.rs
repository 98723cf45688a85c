//! Python bindings: configuration, bounds, observation synthesis, the estimator
//! pipeline, Monte Carlo trials and bound contours.

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ris_locate::config::ConfigFile;
use ris_locate::crb::crb_report;
use ris_locate::estimator::estimate_pipeline;
use ris_locate::montecarlo::{contour_grid, run_trials, trial_seeds};
use ris_locate::signal::{dbm_to_watts, random_profiles, synthesize_observation, watts_to_dbm};
use ris_locate::{RisError, RisPose, TrialOptions, Vec2};

fn to_py(e: RisError) -> PyErr {
    match e {
        RisError::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Surface pose: center `(x, y)` in meters and orientation `alpha` in radians.
#[pyclass(name = "Pose", from_py_object)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyPose {
    #[pyo3(get, set)]
    pub x: f64,
    #[pyo3(get, set)]
    pub y: f64,
    #[pyo3(get, set)]
    pub alpha: f64,
}

impl PyPose {
    fn to_pose(self) -> RisPose {
        RisPose::new(Vec2::new(self.x, self.y), self.alpha)
    }
}

#[pymethods]
impl PyPose {
    #[new]
    fn new(x: f64, y: f64, alpha: f64) -> Self {
        Self { x, y, alpha }
    }

    fn __repr__(&self) -> String {
        format!("Pose(x={}, y={}, alpha={})", self.x, self.y, self.alpha)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self == other
    }
}

/// Scenario configuration, mirroring the JSON file read by the command-line tool.
#[pyclass(name = "Config", from_py_object)]
#[derive(Debug, Clone)]
pub struct PyConfig {
    pub file: ConfigFile,
}

#[pymethods]
impl PyConfig {
    /// The built-in reference scenario.
    #[staticmethod]
    fn reference() -> Self {
        Self {
            file: ConfigFile::table_one(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file = ConfigFile::from_json(text).map_err(to_py)?;
        file.resolve().map_err(to_py)?;
        Ok(Self { file })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let file = ris_locate::config::load_config_file(&path).map_err(to_py)?;
        Ok(Self { file })
    }

    fn to_json(&self) -> String {
        self.file.to_json()
    }

    /// Raises `ValueError` listing every violated constraint.
    fn validate(&self) -> PyResult<()> {
        self.file.resolve().map(|_| ()).map_err(to_py)
    }

    #[getter]
    fn p_t_dbm(&self) -> f64 {
        self.file.system.p_t_dbm
    }

    #[setter]
    fn set_p_t_dbm(&mut self, value: f64) {
        self.file.system.p_t_dbm = value;
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.file.system.num_elements
    }

    #[setter]
    fn set_num_elements(&mut self, value: usize) {
        self.file.system.num_elements = value;
    }

    #[getter]
    fn num_subcarriers(&self) -> usize {
        self.file.system.num_subcarriers
    }

    #[setter]
    fn set_num_subcarriers(&mut self, value: usize) {
        self.file.system.num_subcarriers = value;
    }

    #[getter]
    fn num_transmissions(&self) -> usize {
        self.file.system.num_transmissions
    }

    #[setter]
    fn set_num_transmissions(&mut self, value: usize) {
        self.file.system.num_transmissions = value;
    }

    #[getter]
    fn ifft_size(&self) -> usize {
        self.file.system.ifft_size
    }

    #[setter]
    fn set_ifft_size(&mut self, value: usize) {
        self.file.system.ifft_size = value;
    }

    /// Noise variance per sample in dBm, explicit or derived from the PSD.
    #[getter]
    fn noise_variance_dbm(&self) -> f64 {
        watts_to_dbm(self.file.system_config().noise_variance)
    }

    #[setter]
    fn set_noise_variance_dbm(&mut self, value: Option<f64>) {
        self.file.system.noise_variance_dbm = value;
    }

    #[getter]
    fn pose(&self) -> PyPose {
        let p = &self.file.pose;
        PyPose {
            x: p.p_ris_m[0],
            y: p.p_ris_m[1],
            alpha: p.alpha_rad,
        }
    }

    #[setter]
    fn set_pose(&mut self, pose: PyPose) {
        self.file.pose.p_ris_m = [pose.x, pose.y];
        self.file.pose.alpha_rad = pose.alpha;
    }

    fn __repr__(&self) -> String {
        let s = &self.file.system;
        format!(
            "Config(M={}, N_c={}, T={}, p_t_dbm={}, pose={})",
            s.num_elements,
            s.num_subcarriers,
            s.num_transmissions,
            s.p_t_dbm,
            self.pose().__repr__()
        )
    }
}

/// TEB, PEB and OEB at `pose` (the configured pose when omitted) for one phase profile.
#[pyfunction]
#[pyo3(signature = (config, pose = None, profile_seed = 1, phi = 0.0))]
fn bounds<'py>(
    py: Python<'py>,
    config: &PyConfig,
    pose: Option<PyPose>,
    profile_seed: u64,
    phi: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let (cfg, default_pose, _) = config.file.resolve().map_err(to_py)?;
    let pose = pose.map_or(default_pose, PyPose::to_pose);
    let report = py
        .detach(|| {
            let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, profile_seed);
            crb_report(&cfg, &pose, phi, &profiles)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("teb_s", report.teb)?;
    out.set_item("peb_m", report.peb)?;
    out.set_item("oeb_rad", report.oeb)?;
    out.set_item("singular_condition", report.singular)?;
    Ok(out)
}

/// Observation matrix as `N_c` rows of `T` complex samples; noiseless unless `noise_seed` is given.
#[pyfunction]
#[pyo3(signature = (config, pose = None, profile_seed = 1, phi = 0.0, noise_seed = None))]
fn observe(
    py: Python<'_>,
    config: &PyConfig,
    pose: Option<PyPose>,
    profile_seed: u64,
    phi: f64,
    noise_seed: Option<u64>,
) -> PyResult<Vec<Vec<Complex64>>> {
    let (cfg, default_pose, _) = config.file.resolve().map_err(to_py)?;
    let pose = pose.map_or(default_pose, PyPose::to_pose);
    let obs = py
        .detach(|| {
            let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, profile_seed);
            synthesize_observation(&cfg, &pose, &profiles, phi, noise_seed)
        })
        .map_err(to_py)?;
    Ok(obs
        .y
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect())
}

/// Runs the estimator on one synthesized observation at the configured pose.
#[pyfunction]
#[pyo3(signature = (config, seed = 1, noiseless = false, p_t_dbm = None))]
fn estimate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: u64,
    noiseless: bool,
    p_t_dbm: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (mut cfg, pose, s) = config.file.resolve().map_err(to_py)?;
    if let Some(dbm) = p_t_dbm {
        cfg.tx_power = dbm_to_watts(dbm);
    }
    let (est, tau) = py
        .detach(|| {
            let seeds = trial_seeds(seed, 0, &TrialOptions::default());
            let profiles = random_profiles(cfg.num_elements, cfg.num_transmissions, seeds.profile);
            let obs = synthesize_observation(
                &cfg,
                &pose,
                &profiles,
                seeds.phi,
                (!noiseless).then_some(seeds.noise),
            )?;
            let tau = obs.truth.map(|t| t.tau);
            Ok::<_, RisError>((estimate_pipeline(&obs, &cfg, &s)?, tau))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    let refined = PyPose {
        x: est.refined_pose.center.x,
        y: est.refined_pose.center.y,
        alpha: est.refined_pose.alpha,
    };
    let initial = PyPose {
        x: est.initial_pose.center.x,
        y: est.initial_pose.center.y,
        alpha: est.initial_pose.alpha,
    };
    out.set_item("pose", refined)?;
    out.set_item("initial_pose", initial)?;
    out.set_item("tau_s", est.toa.tau_hat)?;
    out.set_item("true_tau_s", tau)?;
    out.set_item("omega", est.omega_hat)?;
    out.set_item("nu", est.nu_hat)?;
    out.set_item("gain", est.g_r_hat)?;
    out.set_item("converged", est.refine_converged)?;
    out.set_item("iterations", est.refine_iterations)?;
    Ok(out)
}

/// Monte Carlo RMSEs and RMS-averaged bounds at the configured pose.
#[pyfunction]
#[pyo3(signature = (config, n = 100, seed = 1, noiseless = false, fixed_profile = false, p_t_dbm = None))]
fn trials<'py>(
    py: Python<'py>,
    config: &PyConfig,
    n: usize,
    seed: u64,
    noiseless: bool,
    fixed_profile: bool,
    p_t_dbm: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (mut cfg, pose, s) = config.file.resolve().map_err(to_py)?;
    if let Some(dbm) = p_t_dbm {
        cfg.tx_power = dbm_to_watts(dbm);
    }
    let opts = TrialOptions {
        noiseless,
        fixed_profile,
    };
    let stats = py
        .detach(|| run_trials(&cfg, &pose, n, seed, &s, &opts))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("n_trials", stats.n_trials)?;
    out.set_item("failures", stats.failures)?;
    out.set_item("rmse_pos_m", stats.rmse_pos)?;
    out.set_item("rmse_alpha_rad", stats.rmse_alpha)?;
    out.set_item("rmse_tau_s", stats.rmse_tau)?;
    out.set_item("peb_m", stats.peb)?;
    out.set_item("oeb_rad", stats.oeb)?;
    out.set_item("teb_s", stats.teb)?;
    Ok(out)
}

/// PEB and OEB in dB over a grid; `peb_db[i][j]` belongs to `y_m[i]`, `x_m[j]`.
#[pyfunction]
#[pyo3(signature = (config, alpha_rad = 0.0, x_range = (-6.0, 6.0), y_range = (-6.0, 6.0), resolution = 41, profile_seed = 1))]
fn contour<'py>(
    py: Python<'py>,
    config: &PyConfig,
    alpha_rad: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    profile_seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (cfg, _, _) = config.file.resolve().map_err(to_py)?;
    let grid = py
        .detach(|| contour_grid(&cfg, alpha_rad, x_range, y_range, resolution, profile_seed))
        .map_err(to_py)?;
    let rows = |m: &ris_locate::ContourGrid, oeb: bool| -> Vec<Vec<f64>> {
        let field = if oeb { &m.oeb_db } else { &m.peb_db };
        field
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    };
    let out = PyDict::new(py);
    out.set_item("x_m", grid.x_axis.clone())?;
    out.set_item("y_m", grid.y_axis.clone())?;
    out.set_item("peb_db", rows(&grid, false))?;
    out.set_item("oeb_db", rows(&grid, true))?;
    out.set_item("alpha_rad", grid.alpha)?;
    Ok(out)
}

#[pymodule]
fn ris_locate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(trials, m)?)?;
    m.add_function(wrap_pyfunction!(contour, m)?)?;
    Ok(())
}
