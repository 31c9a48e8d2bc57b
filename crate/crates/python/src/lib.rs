use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hlt::ansatz::{fit_ansatz, reconstruct_state, FitOptions, SpectralAnsatz};
use hlt::experiment::{run_experiment, ExperimentConfig, RunOptions};
use hlt::learning::{build_constraint_matrix, estimate_reconstruction_error, svd_cutoff, ConstraintMatrix, ExpectationSource};
use hlt::measurement::{self, MeasurementDataset, MeasurementPlan};
use hlt::pauli::{self, OperatorBasis};
use hlt::state::{self, DensityMatrix, HamiltonianOperator};
use hlt::{io, qst, HltError};

fn to_py(e: HltError) -> PyErr {
    match e {
        HltError::Io(e) => PyIOError::new_err(e.to_string()),
        HltError::NumericConsistency(_) | HltError::LinearAlgebra(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_value<'py>(py: Python<'py>, text: String) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "PauliString", frozen, from_py_object)]
#[derive(Clone)]
struct PyPauliString(pauli::PauliString);

#[pymethods]
impl PyPauliString {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(to_py)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    #[getter]
    fn support(&self) -> Vec<usize> {
        self.0.support()
    }

    /// `(phase exponent, string)` with `self * other = i^phase * string`.
    fn product(&self, other: &Self) -> PyResult<(u8, Self)> {
        let (ph, s) = pauli::pauli_product(&self.0, &other.0).map_err(to_py)?;
        Ok((ph.exponent(), Self(s)))
    }

    fn commutes(&self, other: &Self) -> bool {
        pauli::commutes(&self.0, &other.0)
    }

    /// `i[self, other]` as `(coefficient, string)`, or `None` when they commute.
    fn commutator_i(&self, other: &Self) -> PyResult<Option<(f64, Self)>> {
        Ok(pauli::commutator_i(&self.0, &other.0).map_err(to_py)?.map(|c| (c.coefficient, Self(c.string))))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("PauliString('{}')", self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

#[pyclass(name = "Hamiltonian", frozen, from_py_object)]
#[derive(Clone)]
struct PyHamiltonian(HamiltonianOperator);

#[pymethods]
impl PyHamiltonian {
    /// Coefficients over the contiguous basis of locality at most `k`, in basis order.
    #[new]
    fn new(n_qubits: usize, k: usize, coefficients: Vec<f64>) -> PyResult<Self> {
        let basis = Arc::new(OperatorBasis::local(n_qubits, k).map_err(to_py)?);
        HamiltonianOperator::new(basis, coefficients).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.0.coefficients().to_vec()
    }

    fn labels(&self) -> Vec<String> {
        self.0.basis().iter().map(|p| p.to_string()).collect()
    }

    fn terms(&self) -> Vec<(String, f64)> {
        self.0.terms().map(|(p, c)| (p.to_string(), c)).collect()
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }
}

#[pyclass(name = "DensityMatrix", frozen, from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix(DensityMatrix);

#[pymethods]
impl PyDensityMatrix {
    #[new]
    fn new(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let dim = rows.len();
        if dim == 0 || !dim.is_power_of_two() || rows.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("expected a square matrix of power-of-two size"));
        }
        let m = hlt_matrix(&rows);
        DensityMatrix::from_matrix(dim.trailing_zeros() as usize, m).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn maximally_mixed(n_qubits: usize) -> PyResult<Self> {
        DensityMatrix::maximally_mixed(n_qubits).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    fn to_list(&self) -> Vec<Vec<Complex64>> {
        let m = self.0.matrix();
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    fn expectation(&self, pauli: &str) -> PyResult<f64> {
        let p: pauli::PauliString = pauli.parse().map_err(to_py)?;
        self.0.expectation(&p).map_err(to_py)
    }

    fn eigenvalues(&self) -> PyResult<Vec<f64>> {
        self.0.eigenvalues().map_err(to_py)
    }

    fn top_eigenvalues(&self, count: usize) -> PyResult<Vec<f64>> {
        state::top_eigenvalues(&self.0, count).map_err(to_py)
    }

    fn partial_trace(&self, start: usize, stop: usize) -> PyResult<Self> {
        state::partial_trace(&self.0, start..stop).map(Self).map_err(to_py)
    }

    fn to_text(&self) -> String {
        io::matrix_to_string(self.0.n_qubits(), self.0.matrix())
    }
}

fn hlt_matrix(rows: &[Vec<Complex64>]) -> Mat<Complex64> {
    Mat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

#[pyclass(name = "MeasurementPlan", frozen, from_py_object)]
#[derive(Clone)]
struct PyPlan(MeasurementPlan);

#[pymethods]
impl PyPlan {
    #[getter]
    fn bases(&self) -> Vec<String> {
        self.0.bases().iter().map(|b| b.to_string()).collect()
    }

    #[getter]
    fn shots(&self) -> Vec<u64> {
        self.0.shots().to_vec()
    }

    fn total_shots(&self) -> u64 {
        self.0.total_shots()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "MeasurementDataset", frozen, from_py_object)]
#[derive(Clone)]
struct PyDataset(MeasurementDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        io::dataset_from_str(text).map(Self).map_err(to_py)
    }

    fn to_text(&self) -> String {
        io::dataset_to_string(&self.0)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    #[getter]
    fn plan(&self) -> PyPlan {
        PyPlan(self.0.plan().clone())
    }

    /// Pooled estimate of a Pauli expectation as `(value, samples_used)`.
    fn estimate(&self, pauli: &str) -> PyResult<(f64, u64)> {
        let p: pauli::PauliString = pauli.parse().map_err(to_py)?;
        let e = measurement::estimate_pauli_expectation(&self.0, &p).map_err(to_py)?;
        Ok((e.value, e.samples_used))
    }
}

#[pyclass(name = "ConstraintMatrix", frozen)]
struct PyConstraintMatrix(ConstraintMatrix);

#[pymethods]
impl PyConstraintMatrix {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.nrows(), self.0.ncols())
    }

    fn row_labels(&self) -> Vec<String> {
        self.0.rows().iter().map(|p| p.to_string()).collect()
    }

    fn col_labels(&self) -> Vec<String> {
        self.0.cols().iter().map(|p| p.to_string()).collect()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        let e = self.0.entries();
        (0..e.nrows()).map(|i| (0..e.ncols()).map(|j| e[(i, j)]).collect()).collect()
    }

    /// Singular values in ascending order.
    fn spectrum(&self) -> PyResult<Vec<f64>> {
        Ok(svd_cutoff(&self.0, self.0.ncols()).map_err(to_py)?.spectrum().to_vec())
    }

    /// The `l` lowest right singular vectors.
    fn lowest_vectors(&self, l: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(svd_cutoff(&self.0, l).map_err(to_py)?.right_vectors().to_vec())
    }

    fn apply(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        if v.len() != self.0.ncols() {
            return Err(PyValueError::new_err("vector length differs from the column count"));
        }
        Ok(self.0.apply(&v))
    }
}

#[pyfunction]
fn transverse_ising(n: usize) -> PyResult<PyHamiltonian> {
    state::transverse_ising(n).map(PyHamiltonian).map_err(to_py)
}

#[pyfunction]
fn gibbs_state(h: &PyHamiltonian) -> PyResult<PyDensityMatrix> {
    state::gibbs_state(&h.0).map(PyDensityMatrix).map_err(to_py)
}

#[pyfunction]
fn ghz_reduced_state(n: usize) -> PyResult<PyDensityMatrix> {
    state::ghz_reduced_state(n).map(PyDensityMatrix).map_err(to_py)
}

#[pyfunction]
fn fidelity(a: &PyDensityMatrix, b: &PyDensityMatrix) -> PyResult<f64> {
    state::fidelity(&a.0, &b.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n_qubits, total_shots, k = 2))]
fn overlapping_plan(n_qubits: usize, total_shots: u64, k: usize) -> PyResult<PyPlan> {
    measurement::build_overlapping_plan(n_qubits, k, total_shots).map(PyPlan).map_err(to_py)
}

#[pyfunction]
fn full_plan(n_qubits: usize, shots_per_basis: u64) -> PyResult<PyPlan> {
    qst::qst_plan(n_qubits, shots_per_basis).map(PyPlan).map_err(to_py)
}

#[pyfunction]
fn sample(rho: &PyDensityMatrix, plan: &PyPlan, seed: u64) -> PyResult<PyDataset> {
    measurement::sample(&rho.0, &plan.0, seed).map(PyDataset).map_err(to_py)
}

#[pyfunction]
fn exact_dataset(rho: &PyDensityMatrix, plan: &PyPlan) -> PyResult<PyDataset> {
    measurement::exact_dataset(&rho.0, &plan.0).map(PyDataset).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (data, k = 2))]
fn constraint_matrix(data: &PyDataset, k: usize) -> PyResult<PyConstraintMatrix> {
    build_constraint_matrix(ExpectationSource::Dataset(&data.0), k).map(PyConstraintMatrix).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (rho, k = 2))]
fn exact_constraint_matrix(rho: &PyDensityMatrix, k: usize) -> PyResult<PyConstraintMatrix> {
    build_constraint_matrix(ExpectationSource::State(&rho.0), k).map(PyConstraintMatrix).map_err(to_py)
}

#[pyfunction]
fn reconstruction_error(spectrum: Vec<f64>, l: usize, epsilon: f64) -> PyResult<f64> {
    estimate_reconstruction_error(&spectrum, l, epsilon).map_err(to_py)
}

/// Full HLT pipeline on a dataset; returns the state and the fit report.
#[pyfunction]
#[pyo3(signature = (data, l, k = 2))]
fn learn<'py>(py: Python<'py>, data: &PyDataset, l: usize, k: usize) -> PyResult<(PyDensityMatrix, Bound<'py, PyAny>)> {
    let (rho, report) = py
        .detach(|| -> hlt::Result<_> {
            let km = build_constraint_matrix(ExpectationSource::Dataset(&data.0), k)?;
            let ansatz = SpectralAnsatz::from_constraint_matrix(&km, l)?;
            let (fitted, report) = fit_ansatz(&ansatz, &data.0, &FitOptions::default())?;
            Ok((reconstruct_state(&fitted)?, report))
        })
        .map_err(to_py)?;
    let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PyDensityMatrix(rho), json_value(py, text)?))
}

#[pyfunction]
fn full_qst(data: &PyDataset) -> PyResult<PyDensityMatrix> {
    qst::full_qst(&data.0).map(PyDensityMatrix).map_err(to_py)
}

#[pyfunction]
fn project_physical(rows: Vec<Vec<Complex64>>) -> PyResult<PyDensityMatrix> {
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    qst::project_physical(&hlt_matrix(&rows)).map(PyDensityMatrix).map_err(to_py)
}

/// Runs an experiment from TOML text and returns its record as a dict.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn run<'py>(py: Python<'py>, config: &str, out_dir: Option<std::path::PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let opts = RunOptions { out_dir, resume: false };
    let record = py.detach(|| run_experiment(&cfg, &opts)).map_err(to_py)?;
    let text = serde_json::to_string(&record).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_value(py, text)
}

#[pymodule]
fn hlt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPauliString>()?;
    m.add_class::<PyHamiltonian>()?;
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConstraintMatrix>()?;
    m.add_function(wrap_pyfunction!(transverse_ising, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_state, m)?)?;
    m.add_function(wrap_pyfunction!(ghz_reduced_state, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(overlapping_plan, m)?)?;
    m.add_function(wrap_pyfunction!(full_plan, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(exact_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(exact_constraint_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_error, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(full_qst, m)?)?;
    m.add_function(wrap_pyfunction!(project_physical, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
