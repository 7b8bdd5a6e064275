//! Python bindings for the `hsgs` simulator.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hsgs::basis::TensorBasis;
use hsgs::check::run_suite;
use hsgs::estimates::{aniso_norm, log_sobolev_exponents, Component, NormSpec, SpectralNorms};
use hsgs::galerkin::{cutoff_theta, initial_state, run_path, EnergyLedger, Stepper};
use hsgs::grid::CylinderDomain;
use hsgs::io::parse_config_str;
use hsgs::state::State;
use hsgs::HsgsError;

fn py_err(e: HsgsError) -> PyErr {
    match e {
        HsgsError::Config(_) | HsgsError::Range(_) | HsgsError::Format(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Tensor-product Galerkin basis on a rectangular cylinder.
#[pyclass(name = "Basis", frozen)]
struct PyBasis {
    inner: Arc<TensorBasis>,
}

#[pymethods]
impl PyBasis {
    #[new]
    #[pyo3(signature = (nx, ny, nz, n, n_z, lx = 1.0, ly = 1.0, depth = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(nx: usize, ny: usize, nz: usize, n: usize, n_z: usize, lx: f64, ly: f64, depth: f64) -> PyResult<Self> {
        let d = CylinderDomain::new(lx, ly, depth, nx, ny, nz).map_err(py_err)?;
        Ok(Self { inner: Arc::new(TensorBasis::build(&d, n, n_z).map_err(py_err)?) })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn n_z(&self) -> usize {
        self.inner.n_z
    }

    #[getter]
    fn n_velocity(&self) -> usize {
        self.inner.n_velocity()
    }

    #[getter]
    fn n_temperature(&self) -> usize {
        self.inner.n_temperature()
    }

    fn velocity_eigenvalues(&self) -> Vec<f64> {
        self.inner.velocity_eigs()
    }

    fn temperature_eigenvalues(&self) -> Vec<f64> {
        self.inner.temperature_eigs()
    }

    fn lambda_bar(&self, level: usize) -> PyResult<f64> {
        self.inner.lambda_bar(level).map_err(py_err)
    }

    #[pyo3(signature = (seed, decay = 0.5, l2 = 1.0))]
    fn random_state(&self, seed: u64, decay: f64, l2: f64) -> PyState {
        PyState { inner: State::random(&self.inner, &mut ChaCha8Rng::seed_from_u64(seed), decay, l2) }
    }

    fn zero_state(&self) -> PyState {
        PyState { inner: State::zeros(&self.inner) }
    }

    /// Anisotropic norm `H^{dz,p}_z H^{dxy,q}_xy` of a state; `p`, `q` may be `inf`.
    #[pyo3(signature = (state, p, q, dz = 0, dxy = 0))]
    fn norm(&self, state: &PyState, p: f64, q: f64, dz: usize, dxy: usize) -> PyResult<f64> {
        aniso_norm(&self.inner, &state.inner, NormSpec::sobolev(p, q, dz, dxy), Component::All).map_err(py_err)
    }

    fn h1(&self, state: &PyState) -> f64 {
        SpectralNorms::new(&self.inner, &state.inner).h1()
    }
}

/// Spectral coefficients of `(v, T)` and a time stamp.
#[pyclass(name = "State", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: State,
}

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (velocity, temperature, time = 0.0))]
    fn new(velocity: Vec<f64>, temperature: Vec<f64>, time: f64) -> Self {
        Self { inner: State { velocity, temperature, time } }
    }

    #[getter]
    fn velocity(&self) -> Vec<f64> {
        self.inner.velocity.clone()
    }

    #[getter]
    fn temperature(&self) -> Vec<f64> {
        self.inner.temperature.clone()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    fn norm_l2(&self) -> f64 {
        self.inner.norm_l2()
    }

    fn __repr__(&self) -> String {
        format!("State(t={}, |U|={:.6e})", self.inner.time, self.inner.norm_l2())
    }
}

fn ledger_dict<'py>(py: Python<'py>, ledger: &EnergyLedger) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let names = ledger.column_names();
    let rows: Vec<Vec<f64>> = ledger.rows.iter().map(EnergyLedger::row_values).collect();
    for (i, name) in names.iter().enumerate() {
        d.set_item(name, rows.iter().map(|r| r[i]).collect::<Vec<f64>>())?;
    }
    Ok(d)
}

/// A configured stepper: basis, noise model, forcing and time-stepping options.
#[pyclass(name = "Simulator", frozen)]
struct PySimulator {
    inner: Stepper,
}

#[pymethods]
impl PySimulator {
    /// Builds from TOML configuration text (the same format as the `hsgs` CLI).
    #[new]
    #[pyo3(signature = (config = ""))]
    fn new(config: &str) -> PyResult<Self> {
        let cfg = parse_config_str(config, &[], None).map_err(py_err)?;
        let basis = TensorBasis::build(&cfg.domain, cfg.n, cfg.n_z).map_err(py_err)?;
        Ok(Self { inner: Stepper::from_config(cfg, Arc::new(basis)).map_err(py_err)? })
    }

    #[getter]
    fn basis(&self) -> PyBasis {
        PyBasis { inner: self.inner.ctx.basis.clone() }
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.noise.eta()
    }

    #[getter]
    fn noise_modes(&self) -> usize {
        self.inner.noise.k()
    }

    fn initial_state(&self) -> PyResult<PyState> {
        Ok(PyState { inner: initial_state(self.inner.basis(), &self.inner.config.initial).map_err(py_err)? })
    }

    fn cutoff(&self, state: &PyState) -> PyResult<f64> {
        self.inner.cutoff_state(&state.inner).map_err(py_err)
    }

    /// One step with explicit Wiener increments; returns `(state, blew_up)`.
    fn step(&self, state: &PyState, dt: f64, dw: Vec<f64>) -> PyResult<(PyState, bool)> {
        let out = self.inner.step(&state.inner, dt, &dw).map_err(py_err)?;
        Ok((PyState { inner: out.state }, out.blowup))
    }

    /// Integrates path `path` to `t_end`; returns the ledger columns, stop data and final state.
    #[pyo3(signature = (state, path = 0))]
    fn run<'py>(&self, py: Python<'py>, state: &PyState, path: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = py.detach(|| run_path(&self.inner, &state.inner, path, &mut |_, _| Ok(()))).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("ledger", ledger_dict(py, &r.ledger)?)?;
        d.set_item("stopped", r.ledger.stopped)?;
        d.set_item("stop_time", r.ledger.stop_time)?;
        d.set_item("max_div", r.max_div)?;
        d.set_item("state", PyState { inner: r.state })?;
        Ok(d)
    }

    /// Runs a named verification suite; returns `(passed, [(label, passed, detail)])`.
    fn check(&self, py: Python<'_>, suite: &str) -> PyResult<(bool, Vec<(String, bool, String)>)> {
        let rep = py.detach(|| run_suite(suite, &self.inner.config, &self.inner, None)).map_err(py_err)?;
        Ok((rep.pass(), rep.lines.into_iter().map(|l| (l.label, l.pass, l.detail)).collect()))
    }
}

/// Smooth cut-off `theta_lambda(x)`.
#[pyfunction(name = "cutoff_theta")]
fn py_cutoff_theta(x: f64, lam: f64) -> PyResult<f64> {
    if !(lam > 0.0) {
        return Err(PyValueError::new_err("cut-off scale must be positive"));
    }
    Ok(cutoff_theta(x, lam))
}

/// `(r1, r2)` of the logarithmic Sobolev inequality for exponents `(p1, p2, q)`.
#[pyfunction(name = "log_sobolev_exponents")]
fn py_log_sobolev_exponents(p1: f64, p2: f64, q: f64) -> PyResult<(f64, f64)> {
    log_sobolev_exponents(p1, p2, q).map_err(py_err)
}

#[pymodule]
fn hsgs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasis>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(py_cutoff_theta, m)?)?;
    m.add_function(wrap_pyfunction!(py_log_sobolev_exponents, m)?)?;
    Ok(())
}
