//! Python bindings. Results come back as plain dicts built from the same
//! JSON documents the command-line tool writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use maxres::dataflow::{propagate_intervals, tighten_lookback, LookbackConfig};
use maxres::network::Network;
use maxres::oracle;
use maxres::resilience::{self, ResilienceConfig};
use maxres::solver::SolveConfig;
use maxres::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn config(workers: usize, time_limit: Option<f64>, node_limit: Option<u64>, lookback: Option<usize>) -> ResilienceConfig {
    let mut solve = SolveConfig::default().with_workers(workers);
    solve.time_limit = time_limit;
    solve.node_limit = node_limit;
    ResilienceConfig {
        lookback: lookback.map(|depth| LookbackConfig {
            depth,
            ..Default::default()
        }),
        ..Default::default()
    }
    .with_solve(solve)
}

/// A feed-forward network loaded from its JSON description.
#[pyclass(name = "Network", module = "maxres_py", frozen)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Network::load(path).map(|inner| PyNetwork { inner }).map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Network::from_json_str(text)
            .map(|inner| PyNetwork { inner })
            .map_err(to_py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn input_bounds(&self) -> Vec<(f64, f64)> {
        self.inner.input_bounds().to_vec()
    }

    /// Outputs of every layer, starting with the input itself.
    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .forward(&input)
            .map(|t| t.outputs)
            .map_err(to_py_err)
    }

    fn scores(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.scores(&input).map_err(to_py_err)
    }

    fn strongly_classifies(&self, input: Vec<f64>, m: usize, alpha: f64) -> PyResult<bool> {
        self.inner.strongly_classifies(&input, m, alpha).map_err(to_py_err)
    }

    /// Per-node bounds table, optionally tightened with lookback windows.
    #[pyo3(signature = (lookback=None))]
    fn bounds(&self, py: Python<'_>, lookback: Option<usize>) -> String {
        py.detach(|| {
            let plain = propagate_intervals(&self.inner);
            match lookback {
                Some(depth) => tighten_lookback(
                    &self.inner,
                    &plain,
                    &LookbackConfig {
                        depth,
                        ..Default::default()
                    },
                )
                .dump(),
                None => plain.dump(),
            }
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(input_dim={}, layers={}, classes={})",
            self.inner.input_dim(),
            self.inner.num_layers(),
            self.inner.num_classes()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (net, m, alpha=1.1, k=2, workers=1, time_limit=None, node_limit=None, lookback=None))]
#[allow(clippy::too_many_arguments)]
fn compute_phi(
    py: Python<'_>,
    net: &PyNetwork,
    m: usize,
    alpha: f64,
    k: usize,
    workers: usize,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
    lookback: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(workers, time_limit, node_limit, lookback);
    let r = py
        .detach(|| resilience::compute_phi(&net.inner, m, alpha, k, &cfg))
        .map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (net, alpha=1.1, k=2, workers=1, time_limit=None, node_limit=None, lookback=None))]
#[allow(clippy::too_many_arguments)]
fn compute_xi(
    py: Python<'_>,
    net: &PyNetwork,
    alpha: f64,
    k: usize,
    workers: usize,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
    lookback: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(workers, time_limit, node_limit, lookback);
    let r = py
        .detach(|| resilience::compute_xi(&net.inner, alpha, k, &cfg))
        .map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (net, input, m, delta, k=2, workers=1, time_limit=None, node_limit=None))]
#[allow(clippy::too_many_arguments)]
fn check_local_robustness(
    py: Python<'_>,
    net: &PyNetwork,
    input: Vec<f64>,
    m: usize,
    delta: f64,
    k: usize,
    workers: usize,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(workers, time_limit, node_limit, None);
    let r = py
        .detach(|| resilience::check_local_robustness(&net.inner, &input, m, delta, k, 1.0, &cfg))
        .map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (net, m, workers=1, time_limit=None, node_limit=None))]
fn compute_max_alpha(
    py: Python<'_>,
    net: &PyNetwork,
    m: usize,
    workers: usize,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(workers, time_limit, node_limit, None);
    let r = py
        .detach(|| resilience::compute_max_alpha(&net.inner, m, &cfg))
        .map_err(to_py_err)?;
    to_dict(py, &r)
}

/// Brute-force grid estimate; returns `(estimate, a, eps, resolution)`.
#[pyfunction]
#[pyo3(signature = (net, m, alpha, k, step=0.01))]
#[allow(clippy::type_complexity)]
fn grid_phi(
    py: Python<'_>,
    net: &PyNetwork,
    m: usize,
    alpha: f64,
    k: usize,
    step: f64,
) -> PyResult<(Option<f64>, Option<Vec<f64>>, Option<Vec<f64>>, f64)> {
    let g = py
        .detach(|| oracle::grid_phi(&net.inner, m, alpha, k, step))
        .map_err(to_py_err)?;
    Ok((g.estimate, g.a, g.eps, g.resolution))
}

#[pymodule]
fn maxres_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(compute_phi, m)?)?;
    m.add_function(wrap_pyfunction!(compute_xi, m)?)?;
    m.add_function(wrap_pyfunction!(check_local_robustness, m)?)?;
    m.add_function(wrap_pyfunction!(compute_max_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(grid_phi, m)?)?;
    Ok(())
}
