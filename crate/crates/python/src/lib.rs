//! Python bindings for `mfg_elliptic`.
//!
//! Fields are exchanged as flat lists in time-major order (index
//! `j * Nx^d + i`); structured results come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use mfg_elliptic::config::{load_config as load_run_config, RunConfig};
use mfg_elliptic::diagnostics::{run_diagnostics, DiagnosticsInput, DiagnosticsOptions};
use mfg_elliptic::elliptic::{assemble_a, assemble_b};
use mfg_elliptic::grid::{GridSpec, SpaceTimeField};
use mfg_elliptic::model::{invert_coupling, Ellipticity, ProblemSpec as CoreSpec};
use mfg_elliptic::oracle::coupled_solve;
use mfg_elliptic::selftest::{de_benchmark, run_selftest, se_benchmark};
use mfg_elliptic::solver::{continuation_solve, residual as core_residual, NewtonSettings, SolveReport, SolverSettings};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

/// Problem data: Hamiltonian, coupling, terminal cost and initial density.
#[pyclass(name = "ProblemSpec", module = "mfg_elliptic", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblemSpec {
    inner: CoreSpec,
}

#[pymethods]
impl PyProblemSpec {
    /// Parses the JSON form produced by `to_json`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreSpec = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    /// `H = p^2/2 - 0.1 cos 2 pi x`, `f = m + log m`, `g = m`, `m0 = 1 + 0.3 cos 2 pi x`.
    #[staticmethod]
    fn se_benchmark() -> Self {
        Self { inner: se_benchmark() }
    }

    /// `H = p^2/2`, `f = m`, `g = m`, `m0 = 1 + 0.3 cos 2 pi x`.
    #[staticmethod]
    fn de_benchmark() -> Self {
        Self { inner: de_benchmark() }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    /// `"strict"` or `"degenerate"`.
    #[getter]
    fn ellipticity(&self) -> &'static str {
        match self.inner.ellipticity() {
            Ellipticity::Strict => "strict",
            Ellipticity::Degenerate => "degenerate",
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemSpec(dimension={}, horizon={}, {})",
            self.inner.dimension,
            self.inner.horizon,
            self.ellipticity()
        )
    }
}

/// Uniform space-time grid, periodic in space.
#[pyclass(name = "Grid", module = "mfg_elliptic", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid {
    inner: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (nx, nt, dim = 1, horizon = 1.0))]
    fn new(nx: usize, nt: usize, dim: usize, horizon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: GridSpec::new(dim, nx, nt, horizon).map_err(value_err)?,
        })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    /// Coordinates of spatial node `i`.
    fn x(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.spatial_count() {
            return Err(value_err(format!("spatial index {i} out of range")));
        }
        Ok(self.inner.x(i))
    }

    fn t(&self, j: usize) -> PyResult<f64> {
        if j > self.inner.nt {
            return Err(value_err(format!("time index {j} out of range")));
        }
        Ok(self.inner.t(j))
    }

    fn __repr__(&self) -> String {
        format!("Grid(nx={}, nt={}, dim={}, horizon={})", self.inner.nx, self.inner.nt, self.inner.dim, self.inner.horizon)
    }
}

/// Result of `solve`.
#[pyclass(name = "Solution", module = "mfg_elliptic", frozen)]
struct PySolution {
    spec: CoreSpec,
    report: SolveReport,
}

#[pymethods]
impl PySolution {
    /// `"converged"`, `"stalled"` or `"domain-failure"`.
    #[getter]
    fn status(&self) -> PyResult<String> {
        let v = serde_json::to_value(self.report.status).map_err(runtime_err)?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.report.epsilon
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.report.theta
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.report.warnings.clone()
    }

    #[getter]
    fn message(&self) -> Option<String> {
        self.report.message.clone()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { inner: self.report.u.grid }
    }

    /// Value function, flat and time-major.
    #[getter]
    fn u(&self) -> Vec<f64> {
        self.report.u.values.clone()
    }

    /// Recovered density, or `None` when recovery failed.
    #[getter]
    fn m(&self) -> Option<Vec<f64>> {
        self.report.m.as_ref().map(|m| m.values.clone())
    }

    /// `(epsilon, cauchy_increment)` for every viscosity level.
    #[getter]
    fn stages(&self) -> Vec<(f64, Option<f64>)> {
        self.report.stages.iter().map(|s| (s.epsilon, s.cauchy_increment)).collect()
    }

    /// Newton iterations per continuation solve.
    #[getter]
    fn newton_iterations(&self) -> Vec<usize> {
        self.report.path.iter().map(|p| p.newton_iters).collect()
    }

    /// Runs the diagnostics; `tolerance` is used for the bound checks.
    #[pyo3(signature = (tolerance = 1e-3, options_json = None))]
    fn diagnostics(&self, py: Python<'_>, tolerance: f64, options_json: Option<&str>) -> PyResult<Py<PyAny>> {
        let options: DiagnosticsOptions = match options_json {
            Some(t) => serde_json::from_str(t).map_err(value_err)?,
            None => DiagnosticsOptions::default(),
        };
        options.validate().map_err(value_err)?;
        let report = run_diagnostics(
            &DiagnosticsInput {
                spec: &self.spec,
                epsilon: self.report.epsilon,
                u: &self.report.u,
                m: self.report.m.as_ref(),
                stages: &self.report.stages,
                tolerance,
            },
            &options,
        );
        json_to_py(py, &report)
    }
}

/// Solves by theta-continuation (and the viscosity sequence for degenerate
/// problems). `settings_json` takes the `[solver]` block as JSON.
#[pyfunction]
#[pyo3(signature = (spec, grid, settings_json = None))]
fn solve(py: Python<'_>, spec: &PyProblemSpec, grid: &PyGrid, settings_json: Option<&str>) -> PyResult<PySolution> {
    let settings: SolverSettings = match settings_json {
        Some(t) => serde_json::from_str(t).map_err(value_err)?,
        None => SolverSettings::default(),
    };
    settings.newton.validate().map_err(value_err)?;
    settings.continuation.validate().map_err(value_err)?;
    if spec.inner.dimension != grid.inner.dim {
        return Err(value_err("grid dimension does not match the problem"));
    }
    let inner = spec.inner.clone();
    let g = grid.inner;
    let report = py.detach(|| continuation_solve(&inner, &g, &settings, None));
    Ok(PySolution { spec: inner, report })
}

/// Reads a TOML run configuration; returns `(spec, grid)`.
#[pyfunction]
fn load_config(path: PathBuf) -> PyResult<(PyProblemSpec, PyGrid)> {
    let cfg = load_run_config(&path).map_err(value_err)?;
    Ok((PyProblemSpec { inner: cfg.spec }, PyGrid { inner: cfg.grid }))
}

/// Parses and validates TOML text; returns `(spec, grid)`.
#[pyfunction]
fn parse_config(text: &str) -> PyResult<(PyProblemSpec, PyGrid)> {
    let cfg = RunConfig::from_toml_str(text, "<string>")
        .and_then(RunConfig::validate)
        .map_err(value_err)?;
    Ok((PyProblemSpec { inner: cfg.spec }, PyGrid { inner: cfg.grid }))
}

/// `(A, b)` of the reduced operator at `(x, p, s)`; `A` as nested lists.
#[pyfunction]
fn coefficients(spec: &PyProblemSpec, x: Vec<f64>, p: Vec<f64>, s: f64) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let d = spec.inner.dimension;
    if x.len() != d || p.len() != d {
        return Err(value_err(format!("x and p must have length {d}")));
    }
    let a = assemble_a(&spec.inner, &x, &p, s).map_err(value_err)?;
    let b = assemble_b(&spec.inner, &x, &p, s).map_err(value_err)?;
    let rows = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    Ok((rows, b))
}

/// Density `m` with `f(x, m) = w`.
#[pyfunction]
fn invert(spec: &PyProblemSpec, x: Vec<f64>, w: f64) -> PyResult<f64> {
    invert_coupling(&spec.inner, &x, w).map_err(value_err)
}

fn field(grid: &PyGrid, values: Vec<f64>) -> PyResult<SpaceTimeField> {
    if values.len() != grid.inner.node_count() {
        return Err(value_err(format!(
            "expected {} values, got {}",
            grid.inner.node_count(),
            values.len()
        )));
    }
    Ok(SpaceTimeField::new(grid.inner, values))
}

/// Discrete residual `F(U)` of the elliptic system with coupling `f + eps log m`.
#[pyfunction]
#[pyo3(signature = (spec, grid, u, eps = 0.0))]
fn residual(spec: &PyProblemSpec, grid: &PyGrid, u: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    let u = field(grid, u)?;
    core_residual(&spec.inner, eps, &u).map_err(value_err)
}

/// Reference solve of the coupled `(u, m)` system on a small 1-d grid.
#[pyfunction]
#[pyo3(signature = (spec, grid, eps = 0.0))]
fn oracle_solve(py: Python<'_>, spec: &PyProblemSpec, grid: &PyGrid, eps: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let inner = spec.inner.clone();
    let g = grid.inner;
    let st = py
        .detach(|| coupled_solve(&inner, eps, &g, None, &NewtonSettings::default()))
        .map_err(runtime_err)?;
    Ok((st.u.values, st.m.values))
}

/// Runs the property suite; returns `(all_passed, summary_table)`.
#[pyfunction]
#[pyo3(signature = (quick = true))]
fn selftest(py: Python<'_>, quick: bool) -> (bool, String) {
    let s = py.detach(|| run_selftest(quick));
    (s.all_passed(), s.table())
}

#[pymodule(name = "mfg_elliptic")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblemSpec>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_solve, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
