use std::collections::HashMap;
use std::path::PathBuf;

use gaussmon::gaussian::GaussianState as CoreState;
use gaussmon::measurement::{self, BathSpec, DyneScale};
use gaussmon::scenario::{self, Preset, Scenario as CoreScenario};
use gaussmon::{thermo, validation, Error, Mat, Vector};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::IntegrationFailure { .. } | Error::NoSteadyState(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn mat_from(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

fn mat_to(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Gaussian state given by its first moments and covariance matrix (vacuum = I/2).
#[pyclass(name = "GaussianState", module = "gaussmon_py", skip_from_py_object)]
#[derive(Clone)]
struct GaussianState {
    inner: CoreState,
}

#[pymethods]
impl GaussianState {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = CoreState::physical(Vector::from_vec(mean), mat_from(cov)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn vacuum(modes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CoreState::vacuum(modes).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn thermal(modes: usize, occupation: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreState::thermal(modes, occupation).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn squeezed_vacuum(r: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreState::squeezed_vacuum(r).map_err(to_py)?,
        })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        mat_to(self.inner.cov())
    }

    fn purity(&self) -> PyResult<f64> {
        self.inner.purity().map_err(to_py)
    }

    fn wigner_entropy(&self) -> PyResult<f64> {
        self.inner.wigner_entropy().map_err(to_py)
    }

    fn symplectic_eigenvalues(&self) -> Vec<f64> {
        self.inner.symplectic_eigenvalues()
    }

    #[pyo3(signature = (tol = 1e-8))]
    fn is_physical(&self, tol: f64) -> bool {
        self.inner.is_physical(tol)
    }

    fn __repr__(&self) -> String {
        format!("GaussianState(mean={:?}, cov={:?})", self.mean(), self.cov())
    }
}

/// Open quadratic model: drift A, diffusion D, and drive b(t).
#[pyclass(name = "Model", module = "gaussmon_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: gaussmon::OpenModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (omega = 1.0, gamma = 0.1, n_th = 49.5, drive_amplitude = 2.0, drive_phase = 0.0))]
    fn quench(omega: f64, gamma: f64, n_th: f64, drive_amplitude: f64, drive_phase: f64) -> PyResult<Self> {
        let inner = gaussmon::build_quench_model(omega, gamma, n_th, drive_amplitude, drive_phase).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (kappa = 1.0, gamma = 2.001, n_th = 0.0))]
    fn opo(kappa: f64, gamma: f64, n_th: f64) -> PyResult<Self> {
        Ok(Self {
            inner: gaussmon::build_opo_model(kappa, gamma, n_th).map_err(to_py)?,
        })
    }

    #[getter]
    fn drift(&self) -> Vec<Vec<f64>> {
        mat_to(self.inner.drift())
    }

    #[getter]
    fn drift_irr(&self) -> Vec<Vec<f64>> {
        mat_to(self.inner.drift_irr())
    }

    #[getter]
    fn diffusion(&self) -> Vec<Vec<f64>> {
        mat_to(self.inner.diffusion())
    }

    fn is_stable(&self) -> bool {
        self.inner.is_stable()
    }

    /// Unconditional steady-state covariance.
    fn steady_state(&self) -> PyResult<Vec<Vec<f64>>> {
        let ss = validation::solve_lyapunov(self.inner.drift(), self.inner.diffusion()).map_err(to_py)?;
        Ok(mat_to(&ss))
    }

    /// Rate of change of the Wigner entropy at covariance `cov` under detector `detector`
    /// (unmonitored when omitted).
    #[pyo3(signature = (cov, detector = None))]
    fn entropy_rate(&self, cov: Vec<Vec<f64>>, detector: Option<PyRef<'_, Detector>>) -> PyResult<f64> {
        let cov = mat_from(cov)?;
        let chi = match detector {
            Some(d) => {
                let bath = BathSpec::for_model(&self.inner).map_err(to_py)?;
                let mm = measurement::monitoring_for(&bath, &d.inner).map_err(to_py)?;
                measurement::backaction(&cov, &mm).map_err(to_py)?
            }
            None => Mat::zeros(cov.nrows(), cov.ncols()),
        };
        thermo::entropy_rate(&self.inner, &cov, &chi).map_err(to_py)
    }

    /// (Phi_uc, Pi_uc) for an unconditional state.
    fn flux_and_production(&self, state: PyRef<'_, GaussianState>) -> PyResult<(f64, f64)> {
        thermo::flux_prod_uc(&self.inner, state.inner.cov(), state.inner.mean()).map_err(to_py)
    }
}

/// General-dyne detector with efficiency and additive noise.
#[pyclass(name = "Detector", module = "gaussmon_py", skip_from_py_object)]
#[derive(Clone)]
struct Detector {
    inner: gaussmon::GeneralDyne,
}

#[pymethods]
impl Detector {
    #[staticmethod]
    #[pyo3(signature = (s, angle = 0.0, efficiency = 1.0, excess_noise = 0.0))]
    fn general(s: f64, angle: f64, efficiency: f64, excess_noise: f64) -> PyResult<Self> {
        let inner = gaussmon::GeneralDyne::new(DyneScale::Finite(s), angle, efficiency, excess_noise).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (efficiency = 1.0, excess_noise = 0.0))]
    fn homodyne_x(efficiency: f64, excess_noise: f64) -> PyResult<Self> {
        Self::preset(gaussmon::GeneralDyne::homodyne_x(), efficiency, excess_noise)
    }

    #[staticmethod]
    #[pyo3(signature = (efficiency = 1.0, excess_noise = 0.0))]
    fn homodyne_p(efficiency: f64, excess_noise: f64) -> PyResult<Self> {
        Self::preset(gaussmon::GeneralDyne::homodyne_p(), efficiency, excess_noise)
    }

    #[staticmethod]
    #[pyo3(signature = (efficiency = 1.0, excess_noise = 0.0))]
    fn heterodyne(efficiency: f64, excess_noise: f64) -> PyResult<Self> {
        Self::preset(gaussmon::GeneralDyne::heterodyne(), efficiency, excess_noise)
    }

    /// Covariance matrix of the projected state.
    fn measurement_cm(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(mat_to(&measurement::measurement_cm(&self.inner).map_err(to_py)?))
    }
}

impl Detector {
    fn preset(gd: gaussmon::GeneralDyne, efficiency: f64, excess_noise: f64) -> PyResult<Self> {
        let inner = gd
            .with_efficiency(efficiency)
            .and_then(|g| g.with_excess_noise(excess_noise))
            .map_err(to_py)?;
        Ok(Self { inner })
    }
}

/// A complete run description, as read from a scenario file.
#[pyclass(name = "Scenario", module = "gaussmon_py", skip_from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: CoreScenario,
}

fn preset_from(name: &str) -> PyResult<Preset> {
    Preset::from_name(name).map_err(to_py)
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::parse_scenario(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreScenario::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn quench() -> Self {
        Self {
            inner: CoreScenario::quench_default(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (preset = "heterodyne"))]
    fn opo(preset: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreScenario::opo_default(preset_from(preset)?),
        })
    }

    /// Copy with integrator and detector settings replaced.
    #[pyo3(signature = (*, dt = None, t_final = None, seed = None, preset = None, record_every = None))]
    fn with_options(
        &self,
        dt: Option<f64>,
        t_final: Option<f64>,
        seed: Option<u64>,
        preset: Option<&str>,
        record_every: Option<usize>,
    ) -> PyResult<Self> {
        let mut sc = self.inner.clone();
        if let Some(dt) = dt {
            sc.integrator.dt = dt;
        }
        if let Some(t) = t_final {
            sc.integrator.t_final = t;
        }
        if let Some(s) = seed {
            sc.integrator.seed = s;
        }
        if let Some(p) = preset {
            sc.measurement.preset = preset_from(p)?;
        }
        if let Some(k) = record_every {
            sc.output.record_every = k;
        }
        sc.validate().map_err(to_py)?;
        Ok(Self { inner: sc })
    }

    #[getter]
    fn preset(&self) -> &'static str {
        self.inner.measurement.preset.name()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.integrator.dt
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.integrator.t_final
    }

    fn initial_state(&self) -> PyResult<GaussianState> {
        Ok(GaussianState {
            inner: self.inner.initial.state().map_err(to_py)?,
        })
    }

    /// Ledger columns keyed by their CSV names.
    fn compute(&self, py: Python<'_>) -> PyResult<HashMap<String, Vec<f64>>> {
        let sc = self.inner.clone();
        let out = py.detach(move || scenario::compute(&sc)).map_err(to_py)?;
        let l = out.ledger;
        Ok(HashMap::from([
            ("t".to_string(), l.times),
            ("S".to_string(), l.entropy),
            ("S_uc".to_string(), l.entropy_uc),
            ("dSdt".to_string(), l.entropy_rate),
            ("Phi_uc".to_string(), l.flux_uc),
            ("Pi_uc".to_string(), l.prod_uc),
            ("Idot".to_string(), l.info_rate),
            ("I".to_string(), l.info),
            ("Pi".to_string(), l.prod),
        ]))
    }

    /// Writes ledger.csv and run.json into `out`.
    fn run(&self, py: Python<'_>, out: PathBuf) -> PyResult<usize> {
        let sc = self.inner.clone();
        let res = py.detach(move || scenario::run(&sc, &out)).map_err(to_py)?;
        Ok(res.ledger.len())
    }

    /// Writes ensemble.csv (and zscores.json for ≥ 100 trajectories); returns
    /// (tests, failed) of the z-gate, or None.
    fn ensemble(&self, py: Python<'_>, n_traj: usize, out: PathBuf) -> PyResult<Option<(usize, usize)>> {
        let sc = self.inner.clone();
        let res = py.detach(move || scenario::ensemble(&sc, n_traj, &out)).map_err(to_py)?;
        Ok(res.zscores.map(|z| (z.tests, z.failed)))
    }

    /// Invariant table as (name, value, tolerance, pass) tuples.
    fn validate(&self, py: Python<'_>) -> PyResult<Vec<(String, f64, f64, bool)>> {
        let sc = self.inner.clone();
        let checks = py.detach(move || scenario::validate(&sc)).map_err(to_py)?;
        Ok(checks
            .into_iter()
            .map(|c| (c.name.to_string(), c.value, c.tolerance, c.pass))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Scenario({})", scenario::describe(&self.inner))
    }
}

#[pyfunction]
fn solve_lyapunov(drift: Vec<Vec<f64>>, diffusion: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let ss = validation::solve_lyapunov(&mat_from(drift)?, &mat_from(diffusion)?).map_err(to_py)?;
    Ok(mat_to(&ss))
}

#[pyfunction]
fn info_integrated(cov: Vec<Vec<f64>>, cov_uc: Vec<Vec<f64>>) -> PyResult<f64> {
    thermo::info_integrated(&mat_from(cov)?, &mat_from(cov_uc)?).map_err(to_py)
}

#[pyfunction]
fn mutual_information(cov: Vec<Vec<f64>>, noise_cov: Vec<Vec<f64>>) -> PyResult<f64> {
    thermo::mutual_information(&mat_from(cov)?, &mat_from(noise_cov)?).map_err(to_py)
}

#[pymodule]
fn gaussmon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GaussianState>()?;
    m.add_class::<Model>()?;
    m.add_class::<Detector>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(solve_lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(info_integrated, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
