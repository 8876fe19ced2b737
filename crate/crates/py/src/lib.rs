//! Python bindings: the surrogate network, the problem registry, the
//! training entry point and the estimator verification suite.

use nonlocal_pinn::autodiff::scalar::{Dual, Dual2, Scalar};
use nonlocal_pinn::autodiff::tape::{grad_input, second_directional, Tape};
use nonlocal_pinn::cli::{execute_run, RunConfig, RunOverrides};
use nonlocal_pinn::network::{
    forward_graph, load_checkpoint, save_checkpoint, Activation, ConstraintWrapper, NetworkParams,
};
use nonlocal_pinn::problems;
use nonlocal_pinn::training::{network_values, TrainConfig};
use nonlocal_pinn::verify::run_verification;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;
use std::sync::Arc;

fn parse_activation(s: &str) -> PyResult<Activation> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(PyValueError::new_err(format!(
            "unknown activation {other:?}; expected \"tanh\" or \"relu\""
        ))),
    }
}

/// Dense feed-forward surrogate with autodiff access.
#[pyclass]
struct Network {
    params: Arc<NetworkParams>,
    wrapper: ConstraintWrapper,
}

impl Network {
    fn check_input(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.params.input_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} input coordinates, got {}",
                self.params.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl Network {
    /// Glorot-initialized network; `dims` are layer sizes like
    /// [1, 64, 64, 64, 64, 1].
    #[new]
    #[pyo3(signature = (dims, activation="tanh", seed=0, hard_ball_radius=None))]
    fn new(
        dims: Vec<usize>,
        activation: &str,
        seed: u64,
        hard_ball_radius: Option<f64>,
    ) -> PyResult<Self> {
        let params = NetworkParams::init_glorot(&dims, parse_activation(activation)?, seed)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let wrapper = match hard_ball_radius {
            Some(radius) => ConstraintWrapper::HardBall { radius },
            None => ConstraintWrapper::None,
        };
        Ok(Self {
            params: Arc::new(params),
            wrapper,
        })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.params.flat.len()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.params.dims.clone()
    }

    /// u(x).
    fn forward(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_input(&x)?;
        Ok(network_values(&self.params, self.wrapper, &[x])[0])
    }

    /// Values at many points at once.
    fn forward_many(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        for x in &xs {
            self.check_input(x)?;
        }
        Ok(network_values(&self.params, self.wrapper, &xs))
    }

    /// Gradient of u with respect to the input coordinates.
    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_input(&x)?;
        let mut tape: Tape<f64> = Tape::new();
        let block = tape.alloc_params(&self.params.flat);
        let leaves: Vec<_> = x.iter().map(|&v| tape.leaf(v)).collect();
        let out = forward_graph(&mut tape, &self.params, &block, self.wrapper, &leaves)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        grad_input(&mut tape, out, &leaves).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Second directional derivative v^T H v (forward-over-reverse).
    fn second_directional(&self, x: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        self.check_input(&x)?;
        if v.len() != x.len() {
            return Err(PyValueError::new_err("direction length mismatch"));
        }
        let mut tape: Tape<Dual2> = Tape::new();
        let block = tape.alloc_params(&self.params.flat);
        let leaves: Vec<_> = x
            .iter()
            .zip(&v)
            .map(|(&a, &t)| tape.leaf(Dual2::seeded(a, t)))
            .collect();
        let out = forward_graph(&mut tape, &self.params, &block, self.wrapper, &leaves)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let _ = block;
        second_directional(&mut tape, out, &leaves, &v)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Directional first derivative along v.
    fn directional(&self, x: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        self.check_input(&x)?;
        let mut tape: Tape<Dual> = Tape::new();
        let block = tape.alloc_params(&self.params.flat);
        let leaves: Vec<_> = x
            .iter()
            .zip(&v)
            .map(|(&a, &t)| tape.leaf(Dual::seeded(a, t)))
            .collect();
        let out = forward_graph(&mut tape, &self.params, &block, self.wrapper, &leaves)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(tape.val_of(out).d1)
    }

    /// Versioned JSON checkpoint (bit-faithful round trip).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, self.wrapper, &path)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, wrapper) =
            load_checkpoint(&path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self {
            params: Arc::new(params),
            wrapper,
        })
    }
}

/// Problem registry as a list of dicts.
#[pyfunction]
fn list_problems(py: Python<'_>) -> PyResult<Py<PyList>> {
    let rows = PyList::empty(py);
    for p in problems::registry() {
        let d = PyDict::new(py);
        d.set_item("id", p.id)?;
        d.set_item("input_dim", p.input_dim)?;
        d.set_item("constraint", p.constraint.kind_name())?;
        d.set_item("n_samples_default", p.estimator.n_samples)?;
        rows.append(d)?;
    }
    Ok(rows.into())
}

/// Exact solution of a registry problem at a point.
#[pyfunction]
fn exact_solution(problem: &str, x: Vec<f64>) -> PyResult<f64> {
    let p = problems::lookup(problem).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if x.len() != p.input_dim {
        return Err(PyValueError::new_err(format!(
            "{problem} expects {} coordinates",
            p.input_dim
        )));
    }
    Ok(p.exact_value(&x))
}

/// Forcing term of a registry problem at a point (oracle-backed for the
/// problems whose forcing has no closed form).
#[pyfunction]
fn forcing(problem: &str, x: Vec<f64>) -> PyResult<f64> {
    let p = problems::lookup(problem).map_err(|e| PyValueError::new_err(e.to_string()))?;
    p.forcing(&x).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Default run config (JSON) for a problem, ready for `train`.
#[pyfunction]
fn default_config(problem: &str) -> PyResult<String> {
    let p = problems::lookup(problem).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cfg = TrainConfig::for_problem(&p);
    let body = serde_json::json!({
        "problem": problem,
        "seed": cfg.seed,
        "train": {
            "n_residual_points": cfg.n_residual_points,
            "n_boundary_points": cfg.n_boundary_points,
            "batch_size": cfg.batch_size,
            "adam": {"lr": cfg.adam.lr, "iterations": cfg.adam.iterations},
            "lbfgs": {"iterations": cfg.lbfgs.iterations}
        },
        "estimator": {"n_samples": p.estimator.n_samples}
    });
    Ok(serde_json::to_string_pretty(&body).unwrap())
}

/// Train from a JSON config string; returns a summary dict. Artifacts
/// (metrics.csv, summary.json, checkpoints, solution.csv) land in
/// `out_dir`.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None, seed=None, iterations=None, ns=None))]
fn train(
    py: Python<'_>,
    config_json: &str,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    iterations: Option<usize>,
    ns: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let config = RunConfig::parse(config_json).map_err(PyValueError::new_err)?;
    let overrides = RunOverrides {
        seed,
        iterations,
        ns,
        out: out_dir,
    };
    let outcome =
        execute_run(&config, &overrides).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("problem", &config.problem)?;
    d.set_item("final_rel_l2", outcome.final_rel_l2)?;
    d.set_item("iterations", outcome.iterations)?;
    d.set_item("wall_ms", outcome.wall_ms)?;
    d.set_item("out_dir", outcome.out_dir)?;
    Ok(d.into())
}

/// Run the estimator-versus-oracle verification suite; returns the full
/// report as a dict.
#[pyfunction]
#[pyo3(signature = (samples=1_000_000, tol_sigma=3.0, seed=0))]
fn verify_estimators(
    py: Python<'_>,
    samples: usize,
    tol_sigma: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let report = run_verification(samples, tol_sigma, seed);
    let d = PyDict::new(py);
    d.set_item("all_pass", report.all_pass)?;
    d.set_item("samples", report.samples)?;
    d.set_item("tol_sigma", report.tol_sigma)?;
    let checks = PyList::empty(py);
    for c in &report.checks {
        let row = PyDict::new(py);
        row.set_item("estimator", c.estimator)?;
        row.set_item("test_fn", c.test_fn)?;
        row.set_item("mc_mean", c.mc_mean)?;
        row.set_item("oracle", c.oracle)?;
        row.set_item("stderr", c.stderr)?;
        row.set_item("pass", c.pass)?;
        checks.append(row)?;
    }
    d.set_item("checks", checks)?;
    Ok(d.into())
}

#[pymodule]
fn nonlocal_pinn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(exact_solution, m)?)?;
    m.add_function(wrap_pyfunction!(forcing, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify_estimators, m)?)?;
    Ok(())
}
