//! Python module `asbi`: simulators, mixture densities, trained estimators,
//! metrics and the experiment runner.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use asbi::cli::{self, ExperimentConfig};
use asbi::density::MogDensity;
use asbi::mdn::PosteriorEstimator;
use asbi::metrics::{self, DepthGrid};
use asbi::seed::{derive_seed, rng_for};
use asbi::simproto::{self, PROTOCOL_VERSION};
use asbi::simulators::{self, Action, BoxCollision, GridDeposit, Simulator, ToySimulator};
use asbi::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Contract(_) | Error::Config(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A builtin simulator: `toy`, `box` or `pouring`.
#[pyclass(name = "Simulator", module = "asbi", frozen)]
struct PySimulator {
    inner: Arc<dyn Simulator>,
}

impl PySimulator {
    fn action(&self, values: &[f64]) -> PyResult<Action> {
        self.inner
            .spec()
            .action_grid
            .find(values)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("action {values:?} is not on the grid")))
    }
}

#[pymethods]
impl PySimulator {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        let inner: Arc<dyn Simulator> = match name {
            "toy" => Arc::new(ToySimulator::new()),
            "box" => Arc::new(BoxCollision::default()),
            "pouring" => Arc::new(GridDeposit::default()),
            other => return Err(PyValueError::new_err(format!("unknown simulator {other:?}"))),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec().name.clone()
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.inner.spec().param_dim
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec().obs_dim
    }

    /// `(lower, upper)` of the parameter box.
    #[getter]
    fn param_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = &self.inner.spec().param_bounds;
        (b.lower().to_vec(), b.upper().to_vec())
    }

    #[getter]
    fn action_grid(&self) -> Vec<Vec<f64>> {
        self.inner.spec().action_grid.iter().map(|a| a.values.clone()).collect()
    }

    /// Returns `(values, valid)`.
    fn simulate(&self, theta: Vec<f64>, action: Vec<f64>, seed: u64) -> PyResult<(Vec<f64>, bool)> {
        let a = self.action(&action)?;
        let x = self.inner.simulate(&theta, &a, seed).map_err(py_err)?;
        Ok((x.values, x.valid))
    }

    /// Noise-free output, or `None` when the simulator has none.
    fn noiseless(&self, theta: Vec<f64>, action: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        let a = self.action(&action)?;
        if theta.len() != self.inner.spec().param_dim {
            return Err(PyValueError::new_err("wrong parameter length"));
        }
        Ok(self.inner.noiseless(&theta, &a).map(|x| x.values))
    }

    fn __repr__(&self) -> String {
        format!("Simulator({:?})", self.inner.spec().name)
    }
}

/// Gaussian mixture with Cholesky-factor covariances.
#[pyclass(name = "MogDensity", module = "asbi", frozen)]
struct PyMog {
    inner: MogDensity,
}

#[pymethods]
impl PyMog {
    /// `chol[c]` is the row-major lower-triangular factor of component `c`.
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, chol: Vec<Vec<f64>>) -> PyResult<Self> {
        MogDensity::new(weights, means, chol).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("mixtures serialize")
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means().to_vec()
    }

    fn log_pdf(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner.log_pdf(&theta).map_err(py_err)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        self.inner.sample(&mut rng_for(seed, &[]), n)
    }
}

/// A trained network saved by a run (`estimators/*.json`).
#[pyclass(name = "PosteriorEstimator", module = "asbi", frozen)]
struct PyEstimator {
    inner: PosteriorEstimator,
}

#[pymethods]
impl PyEstimator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PosteriorEstimator::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.arch.input_dim
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.arch.output_dim
    }

    /// The mixture the network outputs for `input` (observation then action
    /// for posteriors, parameters then action for likelihoods).
    fn forward(&self, input: Vec<f64>) -> PyResult<PyMog> {
        self.inner.forward(&input).map(|inner| PyMog { inner }).map_err(py_err)
    }

    fn log_prob(&self, target: Vec<f64>, input: Vec<f64>) -> PyResult<f64> {
        let out = self.inner.log_prob_batch(&[target.as_slice()], &[input.as_slice()]).map_err(py_err)?;
        Ok(out[0])
    }
}

/// Resolved experiment configuration as JSON, after `key=value` overrides.
#[pyfunction]
#[pyo3(signature = (path, overrides = Vec::new()))]
fn load_config(path: PathBuf, overrides: Vec<String>) -> PyResult<String> {
    ExperimentConfig::load(&path, &overrides).map(|c| c.to_json()).map_err(py_err)
}

/// Runs an experiment config (JSON text) into a fresh directory under `out`
/// and returns that directory.
#[pyfunction]
#[pyo3(signature = (config_json, out, seed = None))]
fn run_experiment(py: Python<'_>, config_json: &str, out: PathBuf, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::from_json(config_json, &[]).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let label = format!("{}-{}", cfg.run.seed, cfg.run.method.name());
    let dir = cli::fresh_dir(&out, &cli::timestamp(), &label).map_err(py_err)?;
    let manifest = py.detach(|| cli::execute(&cfg, &dir)).map_err(py_err)?;
    if !manifest.succeeded {
        return Err(PyRuntimeError::new_err(format!(
            "run failed in {}: {}",
            dir.display(),
            manifest.error.unwrap_or_default()
        )));
    }
    Ok(dir.display().to_string())
}

/// A comma-separated table (`logprob`, `utility`, `reperr`, `intervol`) from a
/// run or sweep directory.
#[pyfunction]
fn plot_data(dir: PathBuf, kind: &str) -> PyResult<String> {
    let kind = match kind {
        "logprob" => cli::PlotKind::Logprob,
        "utility" => cli::PlotKind::Utility,
        "reperr" => cli::PlotKind::Reperr,
        "intervol" => cli::PlotKind::Intervol,
        other => return Err(PyValueError::new_err(format!("unknown table kind {other:?}"))),
    };
    cli::plot_data(&dir, kind).map_err(|e| match e {
        cli::PlotError::Missing(m) => PyValueError::new_err(format!("missing record {}", m.0.display())),
        cli::PlotError::Other(e) => py_err(e),
    })
}

/// Conformance checks against a plugin command; `[(name, passed, detail)]`.
#[pyfunction]
#[pyo3(signature = (command, startup_timeout = 10.0, request_timeout = 60.0))]
fn validate_plugin(py: Python<'_>, command: Vec<String>, startup_timeout: f64, request_timeout: f64) -> Vec<(String, bool, String)> {
    let report = py.detach(|| {
        simproto::validate_plugin(
            &command,
            Duration::from_secs_f64(startup_timeout),
            Duration::from_secs_f64(request_timeout),
        )
    });
    report.checks.into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect()
}

fn grid(rows: Vec<Vec<f64>>) -> PyResult<DepthGrid> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged depth grid"));
    }
    DepthGrid::new(r, c, rows.concat()).map_err(py_err)
}

#[pyfunction]
fn inter_vol(real: Vec<Vec<f64>>, sims: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let sims = sims.into_iter().map(grid).collect::<PyResult<Vec<_>>>()?;
    metrics::inter_vol(&grid(real)?, &sims).map_err(py_err)
}

#[pyfunction]
fn mesh_coverage(depth: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    metrics::mesh_coverage(&grid(depth)?).map_err(py_err)
}

#[pyfunction]
fn toy_simulate(theta: [f64; 2], xi: f64, seed: u64) -> f64 {
    simulators::toy_simulate(&theta, xi, &mut asbi::seed::SplitMix64::new(seed))
}

#[pyfunction]
fn toy_noiseless(theta: [f64; 2], xi: f64) -> f64 {
    simulators::toy_noiseless(&theta, xi)
}

#[pyfunction(name = "derive_seed")]
fn py_derive_seed(base: u64, path: Vec<u64>) -> u64 {
    derive_seed(base, &path)
}

#[pymodule(name = "asbi")]
fn asbi_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimulator>()?;
    m.add_class::<PyMog>()?;
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(plot_data, m)?)?;
    m.add_function(wrap_pyfunction!(validate_plugin, m)?)?;
    m.add_function(wrap_pyfunction!(inter_vol, m)?)?;
    m.add_function(wrap_pyfunction!(mesh_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(toy_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(toy_noiseless, m)?)?;
    m.add_function(wrap_pyfunction!(py_derive_seed, m)?)?;
    m.add("PROTOCOL_VERSION", PROTOCOL_VERSION)?;
    Ok(())
}
