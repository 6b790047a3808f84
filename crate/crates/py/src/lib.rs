//! Python bindings: configuration, solving, scoring, generators and experiments.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use topoforge::active_learning::{solve_setting, Provenance, Strategy};
use topoforge::config::ExperimentConfig;
use topoforge::experiment::run_experiment;
use topoforge::fem::FeaCounter;
use topoforge::generator::{init, Activation, Architecture, GeneratorParams};
use topoforge::io::SolveRecord;
use topoforge::kkt::deviation;
use topoforge::setting::ProblemSetting;
use topoforge::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(m) => PyIOError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for topoforge::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Experiment configuration (INI-style text).
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults for `case` ("tip" or "region").
    #[new]
    #[pyo3(signature = (case = "tip"))]
    fn new(case: &str) -> PyResult<Self> {
        let text = format!("[load]\ncase = {case}\n");
        Ok(Self { inner: ExperimentConfig::parse(&text).py()? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::parse(text).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn serialize(&self) -> String {
        self.inner.serialize()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny
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

/// A solved problem: setting parameters, design, compliance, sensitivity and cost.
#[pyclass(name = "SolveRecord", from_py_object)]
#[derive(Clone)]
struct PyRecord {
    inner: SolveRecord,
}

#[pymethods]
impl PyRecord {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SolveRecord::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn setting(&self) -> Vec<f64> {
        self.inner.setting.clone()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x.clone()
    }

    #[getter]
    fn f(&self) -> f64 {
        self.inner.f
    }

    #[getter]
    fn sensitivity(&self) -> Vec<f64> {
        self.inner.sensitivity.clone()
    }

    #[getter]
    fn fea_count(&self) -> u64 {
        self.inner.fea_count
    }
}

/// Feedforward generator mapping an encoded setting to a design vector.
#[pyclass(name = "Generator", from_py_object)]
#[derive(Clone)]
struct PyGenerator {
    inner: GeneratorParams,
}

#[pymethods]
impl PyGenerator {
    /// Seeded initialization of the layer `sizes` with hidden `activation`.
    #[new]
    #[pyo3(signature = (sizes, activation = "tanh", seed = 0))]
    fn new(sizes: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        let act = Activation::parse(activation).ok_or_else(|| PyValueError::new_err(format!("unknown activation `{activation}`")))?;
        let arch = Architecture::new(sizes, act).py()?;
        Ok(Self { inner: init(&arch, seed) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: GeneratorParams::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input).py()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.architecture().input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.architecture().output_dim()
    }
}

fn setting(cfg: &ExperimentConfig, params: &[f64]) -> PyResult<ProblemSetting> {
    cfg.load_case().py()?.setting_from_params(&cfg.mesh().py()?, params).py()
}

/// Dense generator input for the setting parameters.
#[pyfunction]
fn encode(config: &PyConfig, setting_params: Vec<f64>) -> PyResult<Vec<f64>> {
    let s = setting(&config.inner, &setting_params)?;
    Ok(s.encode(&config.inner.mesh().py()?))
}

/// Runs the topology optimizer for one setting.
#[pyfunction]
fn solve(py: Python<'_>, config: &PyConfig, setting_params: Vec<f64>) -> PyResult<PyRecord> {
    let cfg = config.inner.clone();
    let s = setting(&cfg, &setting_params)?;
    let rec = py
        .detach(move || -> topoforge::Result<SolveRecord> {
            let problem = cfg.problem()?;
            Ok(solve_setting(&problem, &s, &cfg.al, None, Provenance::Static)?.to_solve_record())
        })
        .py()?;
    Ok(PyRecord { inner: rec })
}

/// KKT deviation of design `x` for a setting; costs one equilibrium solve.
#[pyfunction]
fn kkt_score<'py>(py: Python<'py>, config: &PyConfig, x: Vec<f64>, setting_params: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let problem = cfg.problem().py()?;
    let s = setting(cfg, &setting_params)?;
    let load = s.realize(problem.mesh()).py()?;
    let sc = deviation(&problem, &x, &load, &cfg.kkt, &FeaCounter::new()).py()?;
    let d = PyDict::new(py);
    d.set_item("d", sc.d)?;
    d.set_item("grad_norm_sq", sc.grad_norm_sq)?;
    d.set_item("g0", sc.g0)?;
    d.set_item("g1", sc.g1)?;
    d.set_item("mu0", sc.multipliers.mu0)?;
    d.set_item("mu1", sc.multipliers.mu1)?;
    d.set_item("fea_cost", sc.fea_cost)?;
    Ok(d)
}

/// Projected density of design `x` at the target sharpness.
#[pyfunction]
fn density(config: &PyConfig, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let problem = config.inner.problem().py()?;
    Ok(problem.density(&x, config.inner.density.beta_target).py()?.rho)
}

/// Binary PGM bytes of a density field.
#[pyfunction]
fn pgm_bytes(rho: Vec<f64>, nx: usize, ny: usize) -> PyResult<Vec<u8>> {
    topoforge::io::pgm_bytes(&rho, nx, ny).py()
}

/// Runs `strategies` over `seeds`, writing outputs under `out`; returns one dict per run.
#[pyfunction]
#[pyo3(signature = (config, strategies, seeds, out, cache = None))]
fn run<'py>(
    py: Python<'py>,
    config: &PyConfig,
    strategies: Vec<String>,
    seeds: Vec<u64>,
    out: PathBuf,
    cache: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let strategies = strategies
        .iter()
        .map(|s| Strategy::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown strategy `{s}`"))))
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = config.inner.clone();
    let runs = py.detach(move || run_experiment(&cfg, &strategies, &seeds, &out, cache.as_deref())).py()?;
    runs.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("seed", r.seed)?;
            d.set_item("strategy", r.strategy.name())?;
            d.set_item("median_gap", r.metrics.median_gap)?;
            d.set_item("mean_gap", r.metrics.mean_gap)?;
            d.set_item("failure_rate", r.metrics.failure_rate)?;
            d.set_item("dataset_size", r.dataset_size)?;
            d.set_item("acquisitions", r.acquisitions)?;
            d.set_item("total_fea", r.total_fea)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "topoforge")]
fn topoforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_score, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(pgm_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
