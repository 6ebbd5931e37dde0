//! Python bindings: Gaussian and posterior types, the aggregation and
//! weighting operators, uncertainty helpers and a whole-experiment runner.

use std::io::Cursor;

use bayesfed::aggregation::{aggregate as aggregate_rs, AggregationStrategy, WeightVector};
use bayesfed::orchestrator::{load_data, run_federation, ExperimentConfig};
use bayesfed::uncertainty::{decompose_variance as decompose_rs, McPredictionBlock};
use bayesfed::weighting::{compute_weights, ClientReport, WeightingScheme};
use bayesfed::{codec, ModelParams};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: bayesfed::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Gaussian", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGaussian(bayesfed::Gaussian);

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: f64, variance: f64) -> PyResult<Self> {
        bayesfed::Gaussian::new(mean, variance).map(Self).map_err(err)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(mean={}, variance={})", self.0.mean(), self.0.variance())
    }
}

#[pyclass(name = "PosteriorSet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPosteriorSet(bayesfed::PosteriorSet);

#[pymethods]
impl PyPosteriorSet {
    #[new]
    #[pyo3(signature = (means, variances, shape_tag = "py"))]
    fn new(means: Vec<f64>, variances: Vec<f64>, shape_tag: &str) -> PyResult<Self> {
        bayesfed::PosteriorSet::from_moments(shape_tag, &means, &variances)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn shape_tag(&self) -> &str {
        self.0.shape_tag()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.0.means()
    }

    #[getter]
    fn variances(&self) -> Vec<f64> {
        self.0.variances()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Serializes to the `BFPS` binary format.
    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        codec::write_binary(&self.0, &mut buf).map_err(err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        codec::read_binary(Cursor::new(data)).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("PosteriorSet(shape_tag={:?}, len={})", self.0.shape_tag(), self.0.len())
    }
}

#[pyfunction]
fn kl_gaussian(p: &PyGaussian, q: &PyGaussian) -> PyResult<f64> {
    bayesfed::kl_gaussian(&p.0, &q.0).map_err(err)
}

#[pyfunction]
fn kl_posterior(p: &PyPosteriorSet, q: &PyPosteriorSet) -> PyResult<f64> {
    bayesfed::kl_posterior(&p.0, &q.0).map_err(err)
}

fn unwrap_sets(clients: &[PyRef<'_, PyPosteriorSet>]) -> Vec<bayesfed::PosteriorSet> {
    clients.iter().map(|c| c.0.clone()).collect()
}

/// Returns `(global, dwc_clamped)`. Weights default to equal.
#[pyfunction]
#[pyo3(signature = (strategy, clients, weights = None, prev_global = None))]
fn aggregate(
    strategy: &str,
    clients: Vec<PyRef<'_, PyPosteriorSet>>,
    weights: Option<Vec<f64>>,
    prev_global: Option<PyRef<'_, PyPosteriorSet>>,
) -> PyResult<(PyPosteriorSet, usize)> {
    let strategy: AggregationStrategy = strategy.parse().map_err(err)?;
    let k = clients.len();
    let w = match weights {
        Some(w) => w,
        None if k > 0 => vec![1.0 / k as f64; k],
        None => return Err(PyValueError::new_err("no clients")),
    };
    let w = WeightVector::new(w).map_err(err)?;
    let out = aggregate_rs(strategy, &unwrap_sets(&clients), &w, prev_global.as_ref().map(|g| &g.0)).map_err(err)?;
    Ok((PyPosteriorSet(out.posterior), out.dwc_clamped))
}

#[pyfunction]
#[pyo3(signature = (scheme, clients, train_sizes, global_model = None))]
fn weights(
    scheme: &str,
    clients: Vec<PyRef<'_, PyPosteriorSet>>,
    train_sizes: Vec<usize>,
    global_model: Option<PyRef<'_, PyPosteriorSet>>,
) -> PyResult<Vec<f64>> {
    let scheme: WeightingScheme = scheme.parse().map_err(err)?;
    if train_sizes.len() != clients.len() {
        return Err(PyValueError::new_err("train_sizes must have one entry per client"));
    }
    let reports: Vec<ClientReport> = unwrap_sets(&clients)
        .into_iter()
        .zip(train_sizes)
        .enumerate()
        .map(|(client_id, (post, train_size))| ClientReport {
            client_id,
            model: ModelParams::Posterior(post),
            train_size,
        })
        .collect();
    let w = compute_weights(scheme, &reports, global_model.as_ref().map(|g| &g.0)).map_err(err)?;
    Ok(w.as_slice().to_vec())
}

#[pyfunction]
fn normalized_entropy(p: Vec<f64>) -> f64 {
    bayesfed::uncertainty::normalized_entropy(&p)
}

type Matrix = Vec<Vec<f64>>;

/// Splits the predictive covariance of M sampled probability rows into
/// `(aleatoric, epistemic)`, each a C × C nested list.
#[pyfunction]
fn decompose_variance(rows: Vec<Vec<f64>>) -> PyResult<(Matrix, Matrix)> {
    let block = McPredictionBlock::new(rows).map_err(err)?;
    let (al, ep) = decompose_rs(&block);
    let nested = |m: &bayesfed::uncertainty::SymMatrix| m.data.chunks(m.dim).map(|r| r.to_vec()).collect();
    Ok((nested(&al), nested(&ep)))
}

/// Runs a full experiment from config text plus `key=value` overrides and
/// returns the per-round metrics and the final evaluation.
#[pyfunction]
#[pyo3(signature = (config_text, overrides = Vec::new()))]
fn run_experiment<'py>(py: Python<'py>, config_text: &str, overrides: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::parse(config_text).map_err(err)?;
    for o in &overrides {
        cfg.apply_override(o).map_err(err)?;
    }
    cfg.validate().map_err(err)?;
    let outcome = py
        .detach(|| {
            let (train, test) = load_data(&cfg)?;
            run_federation(&cfg, &train, &test)
        })
        .map_err(err)?;
    let rounds = outcome
        .rounds
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("round", r.round)?;
            d.set_item("accuracy", r.accuracy)?;
            d.set_item("nll", r.nll)?;
            d.set_item("mean_entropy", r.mean_entropy)?;
            d.set_item("mean_aleatoric", r.mean_aleatoric)?;
            d.set_item("mean_epistemic", r.mean_epistemic)?;
            d.set_item("learning_rate", r.learning_rate)?;
            d.set_item("dwc_clamped", r.dwc_clamped)?;
            d.set_item("weights", r.weights.clone())?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("config", cfg.to_text())?;
    out.set_item("rounds", rounds)?;
    out.set_item("accuracy", outcome.final_evaluation.accuracy)?;
    out.set_item("nll", outcome.final_evaluation.nll)?;
    if let ModelParams::Posterior(p) = &outcome.global {
        out.set_item("global", PyPosteriorSet(p.clone()))?;
    }
    Ok(out)
}

#[pymodule]
fn bayesfed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyPosteriorSet>()?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(kl_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(weights, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
