//! Python bindings: configs, kernels, delay coefficients, runs and the decay fit.

use std::path::PathBuf;

use memwave::config::RunConfig;
use memwave::delay::DelayCoefficient;
use memwave::diagnostics::{cbar as cbar_value, fit_decay_window};
use memwave::kernels::{validate_kernel, MemoryKernel};
use memwave::pipeline::{self, prepare, validate as validate_prepared};
use memwave::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::MalformedInput(_) | Error::Config(_) | Error::Parameter(_) | Error::KernelRejected { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A run configuration (TOML).
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Reads a file; relative table/csv paths resolve against its directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    /// Copy with one sweep parameter (k0, sigma, tau, amplitude, K, dt) replaced.
    fn with_parameter(&self, name: &str, value: f64) -> PyResult<Self> {
        pipeline::with_parameter(&self.inner, name, value)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }
}

/// Memory kernel `μ`.
#[pyclass(name = "Kernel")]
struct PyKernel {
    inner: MemoryKernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn exponential(a: f64, d: f64) -> PyResult<Self> {
        MemoryKernel::exponential(a, d).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn prony(terms: Vec<(f64, f64)>) -> PyResult<Self> {
        MemoryKernel::prony(terms).map(|inner| Self { inner }).map_err(py_err)
    }

    fn __call__(&self, s: f64) -> f64 {
        self.inner.eval(s)
    }

    #[getter]
    fn mu_tilde(&self) -> f64 {
        self.inner.mu_tilde()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    fn tail_mass(&self, start: f64) -> PyResult<f64> {
        self.inner.tail_mass(start).map_err(py_err)
    }

    /// Labels of the failed hypotheses; empty when the kernel is usable.
    fn failures(&self) -> Vec<&'static str> {
        validate_kernel(&self.inner).failures()
    }
}

/// Delay coefficient `k(t)`.
#[pyclass(name = "DelayCoefficient")]
struct PyDelayCoefficient {
    inner: DelayCoefficient,
}

#[pymethods]
impl PyDelayCoefficient {
    #[staticmethod]
    fn constant(k0: f64) -> PyResult<Self> {
        Self::checked(DelayCoefficient::Constant { k0 })
    }

    #[staticmethod]
    fn exp_decay(k0: f64, rate: f64) -> PyResult<Self> {
        Self::checked(DelayCoefficient::ExponentialDecay { k0, rate })
    }

    #[staticmethod]
    fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> PyResult<Self> {
        Self::checked(DelayCoefficient::PiecewiseConstant { breakpoints, values })
    }

    #[staticmethod]
    fn on_off(amplitude: f64, period: f64, duty: f64) -> PyResult<Self> {
        Self::checked(DelayCoefficient::OnOff { amplitude, period, duty })
    }

    fn __call__(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    /// `∫_a^b |k|`.
    fn abs_integral(&self, a: f64, b: f64) -> f64 {
        self.inner.abs_integral(a, b)
    }

    fn c_star(&self, tau: f64) -> f64 {
        self.inner.c_star(tau)
    }

    /// Growth factor `C̄(t)` of the energy estimate.
    fn cbar(&self, b: f64, tau: f64, t: f64) -> f64 {
        cbar_value(&self.inner, b, tau, t)
    }
}

impl PyDelayCoefficient {
    fn checked(inner: DelayCoefficient) -> PyResult<Self> {
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }
}

/// Result of one simulation.
#[pyclass(name = "Run")]
struct PyRun {
    prep: pipeline::Prepared,
    outcome: pipeline::Outcome,
}

#[pymethods]
impl PyRun {
    /// `completed`, `diverged` or `energy-positivity-lost`.
    #[getter]
    fn status(&self) -> &'static str {
        self.outcome.trajectory.termination.label()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.outcome.trajectory.rows.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn energy(&self) -> Vec<f64> {
        self.outcome.trajectory.rows.iter().map(|r| r.energy.total).collect()
    }

    #[getter]
    fn norm(&self) -> Vec<f64> {
        self.outcome.trajectory.norm_trace().into_iter().map(|(_, n)| n).collect()
    }

    #[getter]
    fn cbar(&self) -> Vec<f64> {
        self.outcome.trajectory.rows.iter().map(|r| r.cbar).collect()
    }

    /// Fitted decay rate, `None` when the fit was refused.
    #[getter]
    fn beta(&self) -> Option<f64> {
        self.outcome.report.fit.as_ref().map(|f| f.beta)
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.prep.dt
    }

    fn report_toml(&self) -> PyResult<String> {
        pipeline::to_toml(&self.outcome.report).map_err(py_err)
    }

    /// Writes config.toml, trace.csv and report.toml into `out`.
    fn write(&self, out: PathBuf) -> PyResult<()> {
        pipeline::write_outputs(&out, &self.prep, &self.outcome).map_err(py_err)
    }
}

/// Returns `(passed, report_toml)`.
#[pyfunction]
fn validate(config: &PyConfig) -> PyResult<(bool, String)> {
    let prep = prepare(&config.inner).map_err(py_err)?;
    let v = validate_prepared(&prep).map_err(py_err)?;
    Ok((v.passed(), pipeline::to_toml(&v).map_err(py_err)?))
}

/// Validates and simulates; `force` runs past non-kernel validation failures.
#[pyfunction]
#[pyo3(signature = (config, force = false))]
fn run(py: Python<'_>, config: &PyConfig, force: bool) -> PyResult<PyRun> {
    let cfg = config.inner.clone();
    let (prep, outcome) = py
        .detach(move || pipeline::run_config(&cfg, force))
        .map_err(py_err)?;
    Ok(PyRun { prep, outcome })
}

/// Returns `(M, omega)` from the ensemble estimate.
#[pyfunction]
fn constants(py: Python<'_>, config: &PyConfig) -> PyResult<(f64, f64)> {
    let cfg = config.inner.clone();
    let c = py
        .detach(move || prepare(&cfg).and_then(|p| p.constants()))
        .map_err(py_err)?;
    Ok((c.m, c.omega))
}

/// Fits `E ≈ C e^{−βt}` on the tail starting at fraction `window` of the span.
/// Returns `(C, beta, residual_rms)`.
#[pyfunction]
#[pyo3(signature = (t, energy, window = 0.5))]
fn fit_decay(t: Vec<f64>, energy: Vec<f64>, window: f64) -> PyResult<(f64, f64, f64)> {
    if t.len() != energy.len() {
        return Err(PyValueError::new_err("t and energy differ in length"));
    }
    let trace: Vec<(f64, f64)> = t.into_iter().zip(energy).collect();
    let f = fit_decay_window(&trace, window).map_err(py_err)?;
    Ok((f.c, f.beta, f.residual_rms))
}

#[pymodule]
pub fn memwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyDelayCoefficient>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    Ok(())
}
