//! Python bindings. Tagged objects (laws, penalties) are plain dicts with the
//! same `kind` keys as the TOML config; reports come back as dicts.

use fracid::{
    assemble_sensitivities, penalty_eval as core_penalty_eval, run_ensemble as core_run_ensemble, solve_path,
    target_from_solution, BrownianLattice, EnsembleConfig, EnsembleProblem, IdentificationProblem, InitialData,
    OptimizerConfig, Penalty, SpectralModel, TimeGrid,
};
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: fracid::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Truncated spectral model: eigenvalues, noise covariances and coercivity α.
#[pyclass(name = "Model", module = "fracid_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: SpectralModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(eigenvalue_law: &Bound<'_, PyAny>, covariance_law: &Bound<'_, PyAny>, alpha: f64, n_modes: usize) -> PyResult<Self> {
        let inner = SpectralModel::new(from_py(eigenvalue_law)?, from_py(covariance_law)?, alpha, n_modes).map_err(err)?;
        Ok(PyModel { inner })
    }

    /// `λ_j = j²` with `α = 1/2`.
    #[staticmethod]
    fn laplacian(n_modes: usize, covariance_law: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner = SpectralModel::dirichlet_laplacian(n_modes, from_py(covariance_law)?).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn covariances(&self) -> Vec<f64> {
        self.inner.covariances().to_vec()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    fn with_noise_scale(&self, factor: f64) -> PyResult<Self> {
        Ok(PyModel { inner: self.inner.with_noise_scale(factor).map_err(err)? })
    }

    #[pyo3(signature = (upper = f64::INFINITY))]
    fn admissible_interval<'py>(&self, py: Python<'py>, upper: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.admissible_interval(upper).map_err(err)?)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Model(n_modes={}, alpha={})", self.inner.n_modes(), self.inner.alpha())
    }
}

/// Brownian increments for every mode on a uniform grid.
#[pyclass(name = "Lattice", module = "fracid_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLattice {
    inner: BrownianLattice,
}

#[pymethods]
impl PyLattice {
    #[new]
    fn new(model: &PyModel, t_final: f64, n_steps: usize, seed: u64) -> PyResult<Self> {
        let grid = TimeGrid::new(t_final, n_steps).map_err(err)?;
        Ok(PyLattice { inner: BrownianLattice::generate(seed, &model.inner, grid).map_err(err)? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.grid().dt()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.grid().n_steps
    }

    /// Increments `ΔB_j(t_n)`, one list per mode.
    fn increments(&self) -> Vec<Vec<f64>> {
        rows(self.inner.increments())
    }
}

fn initial(y0: Vec<f64>) -> PyResult<InitialData> {
    InitialData::new(y0).map_err(err)
}

/// Modal coefficients `y_j(t_n)`, one list per mode.
#[pyfunction]
fn solve(model: &PyModel, y0: Vec<f64>, lattice: &PyLattice, s: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&solve_path(&model.inner, &initial(y0)?, &lattice.inner, s).map_err(err)?.field()))
}

/// `(∂_s y, ∂²_s y)` as per-mode lists.
#[pyfunction]
fn sensitivities(model: &PyModel, y0: Vec<f64>, lattice: &PyLattice, s: f64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let sens = assemble_sensitivities(&model.inner, &initial(y0)?, &lattice.inner, s).map_err(err)?;
    Ok((rows(&sens.d1_field()), rows(&sens.d2_field())))
}

/// `(E, ∂_s E, ∂²_s E)` for `E = exp(−λ^s u)`.
#[pyfunction]
fn kernel_derivatives(lambda: f64, u: f64, s: f64) -> (f64, f64, f64) {
    let k = fracid::kernel_derivatives(lambda, u, s);
    (k.value, k.d1, k.d2)
}

/// `(Φ, Φ′, Φ″)` for a penalty dict.
#[pyfunction]
fn penalty_eval(penalty: &Bound<'_, PyAny>, s: f64) -> PyResult<(f64, f64, f64)> {
    let p: Penalty = from_py(penalty)?;
    let v = core_penalty_eval(&p, s).map_err(err)?;
    Ok((v.value, v.d1, v.d2))
}

/// Identification problem on one lattice against a synthetic target at
/// `s_true` (noise from `target_seed`, mean only when `None`).
#[pyclass(name = "Problem", module = "fracid_py", frozen)]
struct PyProblem {
    inner: IdentificationProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (model, y0, lattice, penalty, s_true, target_seed = None))]
    fn new(
        model: &PyModel,
        y0: Vec<f64>,
        lattice: &PyLattice,
        penalty: &Bound<'_, PyAny>,
        s_true: f64,
        target_seed: Option<u64>,
    ) -> PyResult<Self> {
        let y0 = initial(y0)?;
        let target = target_from_solution(&model.inner, &y0, lattice.inner.grid(), target_seed, s_true).map_err(err)?;
        let inner = IdentificationProblem::new(model.inner.clone(), y0, lattice.inner.clone(), target, from_py(penalty)?)
            .map_err(err)?;
        Ok(PyProblem { inner })
    }

    /// Cost and its derivatives at `s`.
    fn evaluate<'py>(&self, py: Python<'py>, s: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.evaluate_with_derivatives(s).map_err(err)?)
    }

    #[pyo3(signature = (s_lo, s_hi, grid_points = 16))]
    fn optimize<'py>(&self, py: Python<'py>, s_lo: f64, s_hi: f64, grid_points: usize) -> PyResult<Bound<'py, PyAny>> {
        let cfg = OptimizerConfig { grid_points, ..OptimizerConfig::new(s_lo, s_hi) };
        to_py(py, &fracid::optimize(&self.inner, &cfg).map_err(err)?)
    }

    /// Solve the same problem on `n_paths` fresh lattices seeded from `master_seed`.
    #[pyo3(signature = (n_paths, master_seed, s_lo, s_hi))]
    fn run_ensemble<'py>(
        &self,
        py: Python<'py>,
        n_paths: usize,
        master_seed: u64,
        s_lo: f64,
        s_hi: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = &self.inner;
        let problem = EnsembleProblem {
            model: p.model.clone(),
            initial: p.initial.clone(),
            grid: p.lattice.grid(),
            target: p.target.clone(),
            penalty: p.penalty.clone(),
            optimizer: OptimizerConfig::new(s_lo, s_hi),
        };
        let cfg = EnsembleConfig { n_paths, master_seed };
        let summary = py.detach(|| core_run_ensemble(&cfg, &problem)).map_err(err)?;
        to_py(py, &summary)
    }
}

#[pymodule]
fn fracid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyLattice>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivities, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_derivatives, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_eval, m)?)?;
    Ok(())
}
