//! Python bindings: schedule maths, the data/anchor/training pipeline, planning and evaluation.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use anchorbridge::geom::{AnchorSet, TrajKind, Trajectory};
use anchorbridge::model::Variant;
use anchorbridge::nn::checkpoint::Checkpoint;
use anchorbridge::pipeline::{self, ReportFile, RunConfig};
use anchorbridge::render::render_frames;
use anchorbridge::sampling::{Policy, Trace};
use anchorbridge::schedule::{bridge_coeffs, vp_alpha_sigma, ScheduleConfig};
use anchorbridge::training::{log_to_csv, DatasetFile};
use anchorbridge::world::{evaluate, ExpertPlanner, ScenarioKind};

create_exception!(anchorbridge, AnchorBridgeError, PyException);

fn err(e: anchorbridge::Error) -> PyErr {
    AnchorBridgeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = anchorbridge::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Noise schedule shared by the bridge and the diffusion baselines.
#[pyclass(name = "Schedule", module = "anchorbridge", frozen)]
struct PySchedule {
    inner: ScheduleConfig,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (beta_d = 2.0, beta_min = 0.1, t_max = 1.0, t_eps = 1e-4))]
    fn new(beta_d: f64, beta_min: f64, t_max: f64, t_eps: f64) -> PyResult<Self> {
        let inner = ScheduleConfig {
            beta_d,
            beta_min,
            t_max,
            t_eps,
            ..ScheduleConfig::default()
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// `(alpha_t, sigma_t)` of the variance-preserving process.
    fn alpha_sigma(&self, t: f64) -> PyResult<(f64, f64)> {
        vp_alpha_sigma(&self.inner, t).map_err(err)
    }

    /// Bridge kernel coefficients `(a_t, b_t, c_t)`.
    fn bridge_coeffs(&self, t: f64) -> PyResult<(f64, f64, f64)> {
        let c = bridge_coeffs(&self.inner, t).map_err(err)?;
        Ok((c.a, c.b, c.c))
    }

    #[getter]
    fn t_max(&self) -> f64 {
        self.inner.t_max
    }
}

/// Run configuration; the same TOML the command-line tool reads.
#[pyclass(name = "RunConfig", module = "anchorbridge")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[setter]
    fn set_kind(&mut self, v: &str) -> PyResult<()> {
        self.inner.kind = parse::<TrajKind>(v)?;
        Ok(())
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.train.epochs = v;
    }

    #[getter]
    fn episodes_per_kind(&self) -> usize {
        self.inner.collect.episodes_per_kind
    }

    #[setter]
    fn set_episodes_per_kind(&mut self, v: usize) {
        self.inner.collect.episodes_per_kind = v;
    }

    #[getter]
    fn denoiser_hidden(&self) -> Vec<usize> {
        self.inner.train.denoiser_hidden.clone()
    }

    #[setter]
    fn set_denoiser_hidden(&mut self, v: Vec<usize>) {
        self.inner.train.denoiser_hidden = v;
    }
}

/// Filtered expert dataset.
#[pyclass(name = "Dataset", module = "anchorbridge", frozen)]
struct PyDataset {
    inner: DatasetFile,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DatasetFile::from_text(text).map_err(err)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    /// Ground-truth state vectors, one per record.
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.records.iter().map(|r| r.x0.to_state()).collect()
    }

    /// Encoded planner conditioning, one per record.
    fn contexts(&self) -> Vec<Vec<f64>> {
        self.inner.records.iter().map(|r| r.z.encode()).collect()
    }
}

/// K-means anchor vocabulary.
#[pyclass(name = "AnchorSet", module = "anchorbridge", frozen)]
struct PyAnchorSet {
    inner: AnchorSet,
}

#[pymethods]
impl PyAnchorSet {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: AnchorSet::from_text(text).map_err(err)?.0,
        })
    }

    #[pyo3(signature = (config_hash = ""))]
    fn to_text(&self, config_hash: &str) -> String {
        self.inner.to_text(config_hash)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn inertia(&self) -> f64 {
        self.inner.inertia
    }

    fn points(&self) -> Vec<Vec<[f64; 2]>> {
        self.inner.anchors.iter().map(|a| a.points.clone()).collect()
    }

    fn speeds(&self) -> Vec<f64> {
        self.inner.anchors.iter().map(|a| a.speed).collect()
    }
}

fn trajectory_dict<'py>(py: Python<'py>, t: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("kind", t.kind.to_string())?;
    d.set_item("points", t.points.clone())?;
    d.set_item("speed", t.speed)?;
    Ok(d)
}

/// A trained planner.
#[pyclass(name = "Policy", module = "anchorbridge", frozen)]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    #[pyo3(signature = (data, config, anchors = None))]
    fn from_checkpoint(data: &[u8], config: &PyRunConfig, anchors: Option<&PyAnchorSet>) -> PyResult<Self> {
        let ck = Checkpoint::from_bytes(data).map_err(err)?;
        let inner =
            pipeline::policy_from_checkpoint(&ck, anchors.map(|a| &a.inner), &config.inner.sampler).map_err(err)?;
        Ok(Self { inner })
    }

    fn checkpoint<'py>(&self, py: Python<'py>, config: &PyRunConfig) -> Bound<'py, PyBytes> {
        let bytes = pipeline::policy_to_checkpoint(&self.inner, &config.inner.hash(), config.inner.seed).to_bytes();
        PyBytes::new(py, &bytes)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    /// Plans at a scenario state reached by the expert after `tick` ticks.
    #[pyo3(signature = (config, scenario, scenario_seed, tick = 0, noise_seed = 0))]
    fn plan<'py>(
        &self,
        py: Python<'py>,
        config: &PyRunConfig,
        scenario: &str,
        scenario_seed: u64,
        tick: usize,
        noise_seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let z = context(config, scenario, scenario_seed, tick)?;
        let t = py.detach(|| self.inner.plan_one(&z, noise_seed)).map_err(err)?;
        trajectory_dict(py, &t)
    }

    /// Like `plan`, returning the solver trace as CSV text.
    #[pyo3(signature = (config, scenario, scenario_seed, tick = 0, noise_seed = 0))]
    fn trace(
        &self,
        config: &PyRunConfig,
        scenario: &str,
        scenario_seed: u64,
        tick: usize,
        noise_seed: u64,
    ) -> PyResult<String> {
        let z = context(config, scenario, scenario_seed, tick)?;
        let (_, mut tr) = self.inner.plan_traced(&z, noise_seed).map_err(err)?;
        tr.config_hash = config.inner.hash();
        tr.seed = config.inner.seed;
        Ok(tr.to_csv())
    }

    /// Closed-loop evaluation over the configured suite; returns the report JSON.
    fn evaluate(&self, py: Python<'_>, config: &PyRunConfig) -> PyResult<String> {
        let cfg = &config.inner;
        let report = py
            .detach(|| pipeline::evaluate_policy(cfg, &self.inner, &cfg.suite_config()?))
            .map_err(err)?;
        Ok(ReportFile::new(cfg, self.inner.variant, report).to_json())
    }
}

fn context(config: &PyRunConfig, scenario: &str, seed: u64, tick: usize) -> PyResult<anchorbridge::model::Context> {
    let cfg = &config.inner;
    let suite = cfg.suite_config().map_err(err)?;
    pipeline::scenario_context(cfg, &suite, parse::<ScenarioKind>(scenario)?, seed, tick).map_err(err)
}

#[pyfunction]
fn generate_dataset(py: Python<'_>, config: &PyRunConfig) -> PyResult<PyDataset> {
    let cfg = &config.inner;
    let inner = py
        .detach(|| pipeline::generate_dataset(cfg, &cfg.suite_config()?))
        .map_err(err)?;
    Ok(PyDataset { inner })
}

#[pyfunction]
fn fit_anchors(config: &PyRunConfig, dataset: &PyDataset) -> PyResult<PyAnchorSet> {
    Ok(PyAnchorSet {
        inner: pipeline::fit_anchor_set(&config.inner, &dataset.inner).map_err(err)?,
    })
}

/// Trains one variant; returns the policy and the per-epoch log as CSV text.
#[pyfunction]
#[pyo3(signature = (config, dataset, anchors, variant = "bridge"))]
fn train(
    py: Python<'_>,
    config: &PyRunConfig,
    dataset: &PyDataset,
    anchors: &PyAnchorSet,
    variant: &str,
) -> PyResult<(PyPolicy, String)> {
    let v = parse::<Variant>(variant)?;
    let (policy, log) = py
        .detach(|| pipeline::train_policy(&config.inner, &dataset.inner, &anchors.inner, v))
        .map_err(err)?;
    Ok((PyPolicy { inner: policy }, log_to_csv(&log)))
}

/// Closed-loop evaluation of the privileged expert; returns the report JSON.
#[pyfunction]
fn evaluate_expert(py: Python<'_>, config: &PyRunConfig) -> PyResult<String> {
    let cfg = &config.inner;
    let report = py
        .detach(|| {
            let scenarios = cfg.suite_config()?.scenarios()?;
            evaluate(&scenarios, &ExpertPlanner { kind: cfg.kind }, &cfg.rollout)
        })
        .map_err(err)?;
    Ok(report.to_json())
}

/// SVG documents, one per solver state of a trace CSV.
#[pyfunction]
fn render(trace_csv: &str) -> PyResult<Vec<String>> {
    render_frames(&Trace::from_csv(trace_csv).map_err(err)?).map_err(err)
}

#[pymodule]
#[pyo3(name = "anchorbridge")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AnchorBridgeError", m.py().get_type::<AnchorBridgeError>())?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAnchorSet>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_anchors, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_expert, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    Ok(())
}
