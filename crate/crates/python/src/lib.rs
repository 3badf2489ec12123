//! Python bindings. Vectors and matrices cross the boundary as lists
//! (matrices as lists of rows).

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use daekron::benchmarks::{build_fisher, build_scalar_example, scalar_reference_state, FisherConfig};
use daekron::energy::{compute_energy, EnergyKind};
use daekron::io::{read_json, write_json, EnergyDocument, SystemDocument};
use daekron::monolithic::{monolithic_future_energy, rank_identities_check, MonolithicOptions};
use daekron::reduction::{reduce_system, validate_stokes_dae};
use daekron::sim::{compare_table, simulate_closed_loop, Plant, SimOptions};
use daekron::{DMatrix, DVector, EnergyPolynomial, Error, ReducedOdeSystem, StokesDaeSystem};

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{name}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Quadratic DAE with Stokes-type (saddle-point) constraint.
#[pyclass(name = "StokesDae", from_py_object)]
#[derive(Clone)]
struct PyStokesDae {
    inner: StokesDaeSystem,
}

#[pymethods]
impl PyStokesDae {
    #[new]
    fn new(
        e11: Vec<Vec<f64>>,
        a11: Vec<Vec<f64>>,
        a12: Vec<Vec<f64>>,
        n: Vec<Vec<f64>>,
        b1: Vec<Vec<f64>>,
        b2: Vec<Vec<f64>>,
        c1: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let inner = StokesDaeSystem::new(
            matrix("E11", e11)?,
            matrix("A11", a11)?,
            matrix("A12", a12)?,
            matrix("N", n)?,
            matrix("B1", b1)?,
            matrix("B2", b2)?,
            matrix("C1", c1)?,
        )
        .map_err(to_py)?;
        Ok(PyStokesDae { inner })
    }

    #[staticmethod]
    fn scalar_example() -> Self {
        PyStokesDae { inner: build_scalar_example() }
    }

    #[staticmethod]
    #[pyo3(signature = (ne=16, alpha=0.1, beta=3.0, eta=30.0))]
    fn fisher(ne: usize, alpha: f64, beta: f64, eta: f64) -> PyResult<Self> {
        if ne < 2 || !(alpha > 0.0) {
            return Err(PyValueError::new_err("need ne ≥ 2 and alpha > 0"));
        }
        Ok(PyStokesDae { inner: build_fisher(&FisherConfig { ne, alpha, beta, eta }) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let doc: SystemDocument = read_json(path).map_err(to_py)?;
        Ok(PyStokesDae { inner: doc.to_system().map_err(to_py)? })
    }

    #[pyo3(signature = (path, name="", eta=None))]
    fn save(&self, path: &str, name: &str, eta: Option<f64>) -> PyResult<()> {
        write_json(path, &SystemDocument::from_system(&self.inner, name, eta)).map_err(to_py)
    }

    /// `(n1, n2, m, p)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        self.inner.dims()
    }

    fn validate(&self) -> String {
        validate_stokes_dae(&self.inner).to_string()
    }

    fn reduce(&self) -> PyResult<PyReduced> {
        Ok(PyReduced { inner: reduce_system(&self.inner).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        let (n1, n2, m, p) = self.inner.dims();
        format!("StokesDae(n1={n1}, n2={n2}, m={m}, p={p})")
    }
}

/// Reduced ODE in the differential coordinates `x_d`.
#[pyclass(name = "Reduced", from_py_object)]
#[derive(Clone)]
struct PyReduced {
    inner: ReducedOdeSystem,
}

#[pymethods]
impl PyReduced {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn e_d(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.e_d)
    }

    #[getter]
    fn a_d(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.a_d)
    }

    #[getter]
    fn b_d(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.b_const)
    }

    #[getter]
    fn c_d(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.c_d)
    }

    #[getter]
    fn theta_r(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.projectors.theta_r)
    }

    /// `x₁ = Θ_r x_d − s u`.
    fn lift_state(&self, x_d: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        if x_d.len() != self.inner.dim() || u.len() != self.inner.inputs() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(self.inner.lift_state(&DVector::from_vec(x_d), &DVector::from_vec(u)).as_slice().to_vec())
    }
}

/// Polynomial energy `½ Σₖ wₖᵀ x^{⊗k}` in reduced coordinates.
#[pyclass(name = "Energy", from_py_object)]
#[derive(Clone)]
struct PyEnergy {
    inner: EnergyPolynomial,
}

impl PyEnergy {
    fn vector(&self, x: Vec<f64>) -> PyResult<DVector<f64>> {
        if x.len() != self.inner.n {
            return Err(PyValueError::new_err(format!("expected a vector of length {}", self.inner.n)));
        }
        Ok(DVector::from_vec(x))
    }
}

#[pymethods]
impl PyEnergy {
    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    /// Coefficient vector of order `k`.
    fn coeff(&self, k: usize) -> PyResult<Vec<f64>> {
        if k < 2 || k > self.inner.degree {
            return Err(PyValueError::new_err(format!("order must be in 2..={}", self.inner.degree)));
        }
        Ok(self.inner.coeff(k).as_slice().to_vec())
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.eval(&self.vector(x)?))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&self.vector(x)?).as_slice().to_vec())
    }

    fn truncated(&self, degree: usize) -> PyResult<Self> {
        Ok(PyEnergy { inner: self.inner.truncated(degree).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let doc: EnergyDocument = read_json(path).map_err(to_py)?;
        Ok(PyEnergy { inner: doc.to_energy().map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_json(path, &EnergyDocument::from_energy(&self.inner)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Energy(kind={}, eta={}, degree={}, n={})", self.inner.kind, self.inner.eta, self.inner.degree, self.inner.n)
    }
}

/// Energy polynomial of the given degree. `method` is `"projected"` or
/// `"monolithic"` (future energy, `B₂ = 0` only).
#[pyfunction]
#[pyo3(signature = (system, eta, degree, kind="future", method="projected"))]
fn energy(system: &PyStokesDae, eta: f64, degree: usize, kind: &str, method: &str) -> PyResult<PyEnergy> {
    let kind: EnergyKind = kind.parse().map_err(to_py)?;
    let inner = match method {
        "projected" => compute_energy(&reduce_system(&system.inner).map_err(to_py)?, kind, eta, degree).map_err(to_py)?,
        "monolithic" if kind == EnergyKind::Future => {
            monolithic_future_energy(&system.inner, eta, degree, &MonolithicOptions::default()).map_err(to_py)?.energy
        }
        "monolithic" => return Err(PyValueError::new_err("the monolithic method computes future energies only")),
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    Ok(PyEnergy { inner })
}

/// Reduced coordinates of the scalar example's state `ξ·(−1, 1)/√2`.
#[pyfunction]
fn scalar_reference_state_of(reduced: &PyReduced, xi: f64) -> Vec<f64> {
    scalar_reference_state(&reduced.inner, xi).as_slice().to_vec()
}

fn options(horizon: f64, atol: f64, rtol: f64) -> SimOptions {
    SimOptions { horizon, atol, rtol, ..SimOptions::default() }
}

/// Closed-loop run with the degree-`degree` feedback from `energy`.
#[pyfunction]
#[pyo3(signature = (system, energy, degree, x0, horizon=50.0, atol=1e-10, rtol=1e-8))]
fn simulate<'py>(
    py: Python<'py>,
    system: &PyStokesDae,
    energy: &PyEnergy,
    degree: usize,
    x0: Vec<f64>,
    horizon: f64,
    atol: f64,
    rtol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let plant = Plant::from_dae(&system.inner).map_err(to_py)?;
    let fb = plant.feedback(&energy.inner, degree).map_err(to_py)?;
    let x0 = energy.vector(x0)?;
    let run = py
        .detach(|| simulate_closed_loop(&plant, &fb, &x0, &options(horizon, atol, rtol)))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("times", run.times.clone())?;
    d.set_item("cost", run.cost.clone())?;
    d.set_item("states", run.states.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>())?;
    d.set_item("controls", run.controls.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>())?;
    d.set_item("total_cost", run.total_cost())?;
    d.set_item("diverged", run.diverged())?;
    d.set_item("termination", format!("{:?}", run.termination))?;
    d.set_item("max_constraint_residual", run.max_constraint_residual)?;
    d.set_item("max_momentum_residual", run.max_momentum_residual)?;
    Ok(d)
}

/// Rows `(degree, value, integral, abs_err, rel_err_pct, diverged)`.
#[pyfunction]
#[pyo3(signature = (system, eta, degrees, x0, horizon=50.0))]
fn table(
    py: Python<'_>,
    system: &PyStokesDae,
    eta: f64,
    degrees: Vec<usize>,
    x0: Vec<f64>,
    horizon: f64,
) -> PyResult<Vec<(usize, f64, f64, f64, f64, bool)>> {
    let plant = Plant::from_dae(&system.inner).map_err(to_py)?;
    if x0.len() != plant.dim() {
        return Err(PyValueError::new_err(format!("expected x0 of length {}", plant.dim())));
    }
    let x0 = DVector::from_vec(x0);
    let rows = py
        .detach(|| compare_table(&plant, eta, &degrees, &x0, &options(horizon, 1e-10, 1e-8)))
        .map_err(to_py)?;
    Ok(rows.into_iter().map(|r| (r.degree, r.value, r.integral, r.abs_err, r.rel_err_pct, r.diverged)).collect())
}

/// Rank and projector identities for a random `A₁₂ ∈ ℝ^{n1×n2}`.
#[pyfunction]
#[pyo3(signature = (n1, n2, k, seed=0))]
fn rank_identities<'py>(py: Python<'py>, n1: usize, n2: usize, k: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let rep = rank_identities_check(n1, n2, k, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("expected_rank", rep.expected_rank)?;
    d.set_item("rank_full", rep.rank_full)?;
    d.set_item("rank_tilde", rep.rank_tilde)?;
    d.set_item("projector_product_error", rep.projector_product_error)?;
    d.set_item("holds", rep.holds())?;
    Ok(d)
}

#[pymodule]
fn daekron_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStokesDae>()?;
    m.add_class::<PyReduced>()?;
    m.add_class::<PyEnergy>()?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_reference_state_of, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(table, m)?)?;
    m.add_function(wrap_pyfunction!(rank_identities, m)?)?;
    Ok(())
}
