//! Python bindings: configuration, the mining simulation, sensor kinetics,
//! one Bayesian update step and the experiment presets.

use std::time::Instant;

use agrichain_core::bayes::{self, PriorMatrix};
use agrichain_core::chain::{validate_chain, Ledger, Network, Simulation as CoreSimulation};
use agrichain_core::config::ExperimentConfig;
use agrichain_core::experiment::{self, Preset};
use agrichain_core::field::ConditionalMatrix;
use agrichain_core::kinetics::{self, SensorParams};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

type Column = [f64; 5];

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_toml_value(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(toml::Value::Boolean(b));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(toml::Value::Float(f));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(toml::Value::String(s));
    }
    if let Ok(items) = v.cast::<PyList>() {
        return items.iter().map(|x| to_toml_value(&x)).collect::<PyResult<Vec<_>>>().map(toml::Value::Array);
    }
    Err(value_err(format!("unsupported config value {v}")))
}

/// Experiment configuration. Keyword arguments override the named preset's
/// defaults (or the plain defaults).
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = None, **overrides))]
    fn new(preset: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = match preset {
            Some(name) => name.parse::<Preset>().map_err(value_err)?.defaults(),
            None => ExperimentConfig::default(),
        };
        let mut table = toml::Table::new();
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let mut value = to_toml_value(&v)?;
                if let toml::Value::Integer(i) = value {
                    let key: String = k.extract()?;
                    if FLOAT_FIELDS.contains(&key.as_str()) {
                        value = toml::Value::Float(i as f64);
                    }
                }
                table.insert(k.extract()?, value);
            }
        }
        let inner = base
            .overlay_toml(&toml::to_string(&table).map_err(value_err)?)
            .map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = ExperimentConfig::from_toml(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(value_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn n_farms(&self) -> usize {
        self.inner.n_farms
    }

    #[getter]
    fn rounds(&self) -> u32 {
        self.inner.rounds
    }

    #[getter]
    fn tw(&self) -> u32 {
        self.inner.tw
    }

    #[getter]
    fn affinity_constant(&self) -> f64 {
        self.inner.affinity_constant()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(seed={}, n_farms={}, rounds={}, tw={})",
            self.inner.seed, self.inner.n_farms, self.inner.rounds, self.inner.tw
        )
    }
}

const FLOAT_FIELDS: [&str; 12] = [
    "k_a",
    "k_d",
    "r_max",
    "epsilon_r",
    "k_dissociation",
    "intra_sigma",
    "application_spread",
    "sbu_epsilon",
    "alpha",
    "initial_credits",
    "trace_threshold",
    "inter_farm_range",
];

/// Miner and gateway ledgers driven round by round.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation {
    inner: CoreSimulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let inner = CoreSimulation::new(config.inner.clone()).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Runs one mining round; returns the round, miner, posterior columns
    /// and the farms skipped after failed authentication.
    fn run_round<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let o = self.inner.run_mining_round().map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("round", o.round)?;
        d.set_item("miner_id", o.miner_id)?;
        d.set_item("steps_used", o.steps_used)?;
        d.set_item("skipped", o.skipped.clone())?;
        d.set_item("posterior", o.posterior.columns.iter().map(|c| c.to_vec()).collect::<Vec<_>>())?;
        Ok(d)
    }

    fn run_rounds(&mut self, n: u32) -> PyResult<()> {
        self.inner.run_rounds(n).map(|_| ()).map_err(runtime_err)
    }

    fn credits(&self) -> Vec<f64> {
        self.inner.accounts().iter().map(|a| a.credits).collect()
    }

    fn height(&self) -> u64 {
        self.inner.fn_ledger().height()
    }

    /// Ledger export text for `"fn"` (miners) or `"tn"` (gateways).
    fn export(&self, network: &str) -> PyResult<String> {
        let ledger = match network {
            "fn" => self.inner.fn_ledger(),
            "tn" => self.inner.tn_ledger(),
            other => return Err(value_err(format!("network must be `fn` or `tn`, got `{other}`"))),
        };
        let mut buf = Vec::new();
        ledger.export(&mut buf).map_err(runtime_err)?;
        String::from_utf8(buf).map_err(runtime_err)
    }

    fn validate(&self) -> bool {
        let d = self.inner.config().difficulty;
        validate_chain(self.inner.fn_ledger(), d) && validate_chain(self.inner.tn_ledger(), d)
    }
}

/// Height of the first invalid block in a ledger export, or `None`.
#[pyfunction]
fn first_invalid_block(text: &str) -> PyResult<Option<u64>> {
    let ledger = Ledger::import(text.as_bytes()).map_err(value_err)?;
    let d = ledger.declared_difficulty().map_err(value_err)?;
    Ok(ledger.first_invalid(d))
}

/// Network name (`FN` or `TN`) of a ledger export.
#[pyfunction]
fn ledger_network(text: &str) -> PyResult<&'static str> {
    let ledger = Ledger::import(text.as_bytes()).map_err(value_err)?;
    Ok(match ledger.network {
        Network::Functional => "FN",
        Network::Transaction => "TN",
    })
}

#[pyfunction]
#[pyo3(signature = (concentration, k_dissociation = 10.0))]
fn response_factor(concentration: f64, k_dissociation: f64) -> PyResult<f64> {
    kinetics::settled_response_factor(&SensorParams::with_affinity(k_dissociation), concentration).map_err(value_err)
}

#[pyfunction]
fn equilibrium_rf(concentration: f64, k_dissociation: f64) -> f64 {
    kinetics::equilibrium_rf(concentration, k_dissociation)
}

/// Class letter `A`..`E` of a response factor in `[0, 1]`.
#[pyfunction]
fn classify(rf: f64) -> PyResult<String> {
    kinetics::classify(rf).map(|c| c.label().to_string()).map_err(value_err)
}

/// Least-squares affinity constant from `(concentration, rf)` pairs.
#[pyfunction]
fn fit_rf_model<'py>(py: Python<'py>, samples: Vec<(f64, f64)>) -> PyResult<Bound<'py, PyDict>> {
    let fit = kinetics::fit_rf_model(&samples).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("k_d_hat", fit.k_d_hat)?;
    d.set_item("residual_sse", fit.residual_sse)?;
    d.set_item("active_region", fit.active_region)?;
    d.set_item("iterations", fit.iterations)?;
    Ok(d)
}

/// One Bayesian update over per-farm class columns. Returns
/// `(posterior, next_prior)`.
#[pyfunction]
fn sbu_step(prior: Vec<Column>, likelihood: Vec<Column>) -> PyResult<(Vec<Column>, Vec<Column>)> {
    let farm_ids = (0..likelihood.len() as u32).collect();
    let prior = PriorMatrix { columns: prior, step: 0 };
    let likelihood = ConditionalMatrix {
        farm_ids,
        columns: likelihood,
    };
    let (post, next) = bayes::sbu_step(&prior, &likelihood).map_err(value_err)?;
    Ok((post.columns, next.columns))
}

/// Runs a named preset. Writes its files into `out_dir` when given and
/// returns the summary values.
#[pyfunction]
#[pyo3(signature = (name, config = None, out_dir = None))]
fn run_preset(name: &str, config: Option<&PyConfig>, out_dir: Option<std::path::PathBuf>) -> PyResult<Vec<(String, String)>> {
    let started = Instant::now();
    let preset: Preset = name.parse().map_err(value_err)?;
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_else(|| preset.defaults());
    let output = experiment::run_preset(preset, &cfg).map_err(runtime_err)?;
    if let Some(dir) = out_dir {
        experiment::write_run(&dir, preset.name(), &cfg, &output, started).map_err(runtime_err)?;
    }
    Ok(output.summary)
}

#[pymodule]
fn agrichain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", experiment::VERSION)?;
    m.add("PRESETS", Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(response_factor, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_rf, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rf_model, m)?)?;
    m.add_function(wrap_pyfunction!(sbu_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(first_invalid_block, m)?)?;
    m.add_function(wrap_pyfunction!(ledger_network, m)?)?;
    Ok(())
}
