//! Python bindings: instance generation and serialization, exact trace
//! evaluation, the brute-force references and the branch-and-bound solver.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use sprel::bnb::{self, Limits};
use sprel::envelopes::f3_envelope;
use sprel::model::{CutMode, RelaxationConfig};
use sprel::reliability;
use sprel::spgraph;
use std::path::Path;
use std::time::Duration;

fn err(e: sprel::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A series-parallel reliability instance (edges, composition sequence,
/// budget fraction and optional selection rows).
#[pyclass(name = "Instance", module = "sprel_py")]
struct PyInstance {
    inner: spgraph::Instance,
}

#[pymethods]
impl PyInstance {
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn budget(&self) -> usize {
        self.inner.budget()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write_file(Path::new(path)).map_err(err)
    }

    fn with_alpha(&self, alpha: f64) -> PyResult<PyInstance> {
        Ok(PyInstance {
            inner: self.inner.clone().with_alpha(alpha).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Instance(m={}, alpha={})", self.inner.m(), self.inner.alpha())
    }
}

fn mask_from_py(obj: &Bound<'_, PyAny>, m: usize) -> PyResult<Vec<bool>> {
    if let Ok(s) = obj.extract::<String>() {
        return spgraph::parse_mask(&s, m).map_err(err);
    }
    if let Ok(v) = obj.extract::<Vec<bool>>() {
        if v.len() != m {
            return Err(PyValueError::new_err(format!(
                "mask needs {m} entries, got {}",
                v.len()
            )));
        }
        return Ok(v);
    }
    if let Ok(v) = obj.extract::<Vec<i64>>() {
        if v.len() != m {
            return Err(PyValueError::new_err(format!(
                "mask needs {m} entries, got {}",
                v.len()
            )));
        }
        return Ok(v.into_iter().map(|b| b != 0).collect());
    }
    Err(PyValueError::new_err(
        "mask must be a bit string like \"101\" or a list of 0/1",
    ))
}

/// Generate a pseudorandom instance (deterministic in `seed`).
#[pyfunction]
#[pyo3(signature = (m, seed=1, alpha=1.0))]
fn generate(m: usize, seed: u64, alpha: f64) -> PyResult<PyInstance> {
    let inner = spgraph::generate(m, seed)
        .and_then(|i| i.with_alpha(alpha))
        .map_err(err)?;
    Ok(PyInstance { inner })
}

/// Load an instance from a JSON file.
#[pyfunction]
fn load(path: &str) -> PyResult<PyInstance> {
    Ok(PyInstance {
        inner: spgraph::Instance::read_file(Path::new(path)).map_err(err)?,
    })
}

/// Parse an instance from a JSON string.
#[pyfunction]
fn loads(json: &str) -> PyResult<PyInstance> {
    Ok(PyInstance {
        inner: spgraph::Instance::from_json(json).map_err(err)?,
    })
}

/// Exact reliability of one selection mask.
#[pyfunction]
fn evaluate(instance: &PyInstance, mask: &Bound<'_, PyAny>) -> PyResult<f64> {
    let mask = mask_from_py(mask, instance.inner.m())?;
    Ok(reliability::evaluate(&instance.inner, &mask).map_err(err)?.r)
}

/// Full evaluation trace: per-node values and the final reliability.
#[pyfunction]
fn trace<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    mask: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyDict>> {
    let mask = mask_from_py(mask, instance.inner.m())?;
    let t = reliability::evaluate(&instance.inner, &mask).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("y", t.y)?;
    d.set_item("omega", t.omega)?;
    d.set_item("omega_bar", t.omega_bar)?;
    d.set_item("r", t.r)?;
    Ok(d)
}

/// Reliability by exhaustive state enumeration (small instances only).
#[pyfunction]
fn oracle_reliability(instance: &PyInstance, mask: &Bound<'_, PyAny>) -> PyResult<f64> {
    let mask = mask_from_py(mask, instance.inner.m())?;
    reliability::oracle_reliability(&instance.inner, &mask).map_err(err)
}

/// Best feasible selection by exhaustive mask enumeration (small instances
/// only); returns `(mask, reliability)` or `None` when nothing is feasible.
#[pyfunction]
fn oracle_optimize(instance: &PyInstance) -> PyResult<Option<(String, f64)>> {
    Ok(reliability::oracle_optimize(&instance.inner)
        .map_err(err)?
        .map(|(mask, r)| (spgraph::mask_to_string(&mask), r)))
}

/// Concave envelope of the series composition over `[0, ux] x [0, uy]`.
#[pyfunction]
fn envelope(x: f64, y: f64, ux: f64, uy: f64) -> f64 {
    f3_envelope(x, y, ux, uy)
}

/// Branch-and-bound solve; returns a dict with the incumbent, bound, gap
/// and search statistics.
#[pyfunction]
#[pyo3(signature = (instance, cuts="improved", time_limit=None, node_limit=None))]
fn solve<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    cuts: &str,
    time_limit: Option<f64>,
    node_limit: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cut_mode = match cuts {
        "none" => CutMode::WithoutCuts,
        "envelope" => CutMode::EnvelopeCuts,
        "improved" => CutMode::ImprovedEnvelopeCuts,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown cut configuration {other:?}; use none, envelope or improved"
            )))
        }
    };
    let config = RelaxationConfig {
        cut_mode,
        ..RelaxationConfig::default()
    };
    let limits = Limits {
        time: time_limit.map(Duration::from_secs_f64),
        nodes: node_limit,
    };
    let res = bnb::solve(&instance.inner, &config, &limits).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("status", res.termination.label())?;
    d.set_item(
        "mask",
        res.incumbent_mask.as_deref().map(spgraph::mask_to_string),
    )?;
    d.set_item("reliability", res.incumbent_reliability)?;
    d.set_item("bound", res.best_bound)?;
    d.set_item("gap", res.gap)?;
    d.set_item("root_bound", res.root_bound)?;
    d.set_item("nodes", res.nodes)?;
    d.set_item("cuts", res.cuts.total())?;
    d.set_item("time_s", res.wall_time.as_secs_f64())?;
    Ok(d)
}

#[pymodule]
fn sprel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(loads, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_reliability, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
