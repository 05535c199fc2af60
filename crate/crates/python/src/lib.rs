//! Python bindings. Structured results (densities, spectra, reports) are
//! returned as plain dicts built from their JSON form.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufReader, BufWriter};

use mfa_core::dyadic::{self, TreeFormat};
use mfa_core::largedev::{self, Aggregation, ScaleWindow, ScalingMethod, SpectrumOptions};
use mfa_core::leaders::{self as core_leaders, LeaderKind};
use mfa_core::rws::{self, Atom, ScaleDistributionSpec, Tolerances, ValidationOptions};
use mfa_core::snu::{self, Interpolation};
use mfa_core::MfaError;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

create_exception!(pymfa, RefusalError, PyException, "A guarded precondition does not hold.");
create_exception!(pymfa, EstimationError, PyException, "Not enough data for an estimate.");

fn to_py(e: MfaError) -> PyErr {
    match e {
        MfaError::Refusal(m) => RefusalError::new_err(m),
        MfaError::Estimation(m) => EstimationError::new_err(m),
        MfaError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for mfa_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn aggregation(s: &str) -> PyResult<Aggregation> {
    match s {
        "max_over_scales" => Ok(Aggregation::MaxOverScales),
        "regression" => Ok(Aggregation::Regression),
        "origin_regression" => Ok(Aggregation::OriginRegression),
        _ => Err(PyValueError::new_err(format!("unknown aggregation '{s}'"))),
    }
}

fn scaling_method(s: &str) -> PyResult<ScalingMethod> {
    match s {
        "regression" => Ok(ScalingMethod::Regression),
        "min_ratio" => Ok(ScalingMethod::MinRatio),
        "origin_regression" => Ok(ScalingMethod::OriginRegression),
        _ => Err(PyValueError::new_err(format!("unknown scaling method '{s}'"))),
    }
}

fn window(j_min: Option<u32>, j_max: Option<u32>, fallback: ScaleWindow) -> PyResult<ScaleWindow> {
    ScaleWindow::new(j_min.unwrap_or(fallback.j_min), j_max.unwrap_or(fallback.j_max)).py_err()
}

/// Coefficient magnitudes on a dyadic tree, level `j` holding `2^j` values.
#[pyclass(name = "CoefficientTree", module = "pymfa", frozen)]
#[derive(Clone)]
struct PyTree(dyadic::CoefficientTree);

#[pymethods]
impl PyTree {
    #[new]
    fn new(levels: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyTree(dyadic::CoefficientTree::new(levels).py_err()?))
    }

    #[staticmethod]
    fn zeros(max_scale: u32) -> PyResult<Self> {
        Ok(PyTree(dyadic::CoefficientTree::zeros(max_scale).py_err()?))
    }

    /// Reads a tree in `binary`, `json` or `csv` format.
    #[staticmethod]
    #[pyo3(signature = (path, format = "binary"))]
    fn read(path: &str, format: &str) -> PyResult<Self> {
        let fmt: TreeFormat = format.parse().py_err()?;
        let file = File::open(path)?;
        Ok(PyTree(dyadic::read_tree(BufReader::new(file), fmt).py_err()?))
    }

    #[pyo3(signature = (path, format = "binary"))]
    fn write(&self, path: &str, format: &str) -> PyResult<()> {
        let fmt: TreeFormat = format.parse().py_err()?;
        let file = File::create(path)?;
        dyadic::write_tree(&self.0, fmt, BufWriter::new(file)).py_err()
    }

    #[getter]
    fn max_scale(&self) -> u32 {
        self.0.max_scale()
    }

    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    fn level(&self, j: u32) -> PyResult<Vec<f64>> {
        if j > self.0.max_scale() {
            return Err(PyValueError::new_err(format!("scale {j} beyond depth {}", self.0.max_scale())));
        }
        Ok(self.0.level(j).to_vec())
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        self.0.levels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.node_count()
    }

    fn __repr__(&self) -> String {
        format!("CoefficientTree(J={})", self.0.max_scale())
    }
}

/// Non-decreasing profile given by knots, `right-constant` or `linear`.
#[pyclass(name = "AdmissibleProfile", module = "pymfa", frozen)]
#[derive(Clone)]
struct PyProfile(snu::AdmissibleProfile);

#[pymethods]
impl PyProfile {
    #[new]
    #[pyo3(signature = (alpha_min, knots, interpolation = "right-constant"))]
    fn new(alpha_min: f64, knots: Vec<(f64, f64)>, interpolation: &str) -> PyResult<Self> {
        let interp = match interpolation {
            "right-constant" => Interpolation::RightConstant,
            "linear" => Interpolation::Linear,
            other => return Err(PyValueError::new_err(format!("unknown interpolation '{other}'"))),
        };
        Ok(PyProfile(snu::AdmissibleProfile::new(alpha_min, knots, interp).py_err()?))
    }

    fn __call__(&self, alpha: f64) -> f64 {
        self.0.eval(alpha)
    }

    /// Critical exponent `p_ν`; `inf` when `alpha_min >= 0`.
    fn p_nu(&self) -> PyResult<f64> {
        snu::p_nu(&self.0).py_err()
    }

    /// Finite-scale comparison of a tree's profile estimate with this one.
    #[pyo3(signature = (tree, epsilon = 0.1, slack = 0.1))]
    fn membership<'py>(&self, py: Python<'py>, tree: &PyTree, epsilon: f64, slack: f64) -> PyResult<Bound<'py, PyAny>> {
        let w = ScaleWindow::with_margin(tree.0.max_scale(), 0);
        to_dict(py, &snu::membership_diagnostic(&tree.0, &self.0, epsilon, w, slack).py_err()?)
    }
}

/// Per-scale law of a random wavelet series.
#[pyclass(name = "ScaleDistribution", module = "pymfa", frozen)]
#[derive(Clone)]
struct PySpec(ScaleDistributionSpec);

#[pymethods]
impl PySpec {
    #[staticmethod]
    fn lacunary(alpha: f64, eta: f64) -> PyResult<Self> {
        Ok(PySpec(ScaleDistributionSpec::lacunary(alpha, eta).py_err()?))
    }

    /// Atoms as `(alpha, eta)` pairs.
    #[staticmethod]
    fn discrete(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        let atoms = atoms.into_iter().map(|(alpha, eta)| Atom { alpha, eta }).collect();
        Ok(PySpec(ScaleDistributionSpec::discrete(atoms).py_err()?))
    }

    #[staticmethod]
    #[pyo3(signature = (profile, grid_points = snu::DEFAULT_GRID_POINTS))]
    fn associated(profile: &PyProfile, grid_points: usize) -> PyResult<Self> {
        Ok(PySpec(snu::associated_rws(&profile.0, grid_points).py_err()?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: ScaleDistributionSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.check_family().py_err()?;
        Ok(PySpec(spec))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("spec serializes")
    }

    fn with_signs(&self, signs: bool) -> Self {
        PySpec(self.0.clone().with_signs(signs))
    }

    fn sample(&self, max_scale: u32, seed: u64) -> PyResult<PyTree> {
        Ok(PyTree(rws::sample(&self.0, max_scale, seed).py_err()?))
    }

    /// `(alpha, mass)` atoms of the law at scale `j`.
    fn probabilities(&self, j: u32) -> Vec<(f64, f64)> {
        self.0.probabilities(j)
    }

    fn theory<'py>(&self, py: Python<'py>, p: f64) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &rws::theoretical_spectrum(&self.0, p).py_err()?)
    }

    /// Theoretical `D(h)` on `h_grid`, `-inf` outside the support.
    fn spectrum(&self, p: f64, h_grid: Vec<f64>) -> PyResult<Vec<f64>> {
        let th = rws::theoretical_spectrum(&self.0, p).py_err()?;
        Ok(h_grid.iter().map(|h| th.eval(*h)).collect())
    }

    fn asymptotics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &rws::asymptotics(&self.0).py_err()?)
    }

    #[pyo3(signature = (p, max_scale = 14, realizations = 8, seed = 0, tolerance = None))]
    fn validate<'py>(
        &self,
        py: Python<'py>,
        p: f64,
        max_scale: u32,
        realizations: usize,
        seed: u64,
        tolerance: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let opts = ValidationOptions {
            seed,
            tolerances: tolerance.map(Tolerances::uniform).unwrap_or_default(),
            ..ValidationOptions::default()
        };
        let report = py.allow_threads(|| rws::validate_montecarlo(&self.0, p, max_scale, realizations, &opts));
        to_dict(py, &report.py_err()?)
    }

    fn __repr__(&self) -> String {
        format!("ScaleDistribution({})", self.to_json())
    }
}

/// Leader values per level; `kind` is `p_leader`, `restricted` or `classical`
/// (the last ignores `p`).
#[pyfunction]
#[pyo3(signature = (tree, p, kind = "p_leader"))]
fn leaders(tree: &PyTree, p: f64, kind: &str) -> PyResult<Vec<Vec<f64>>> {
    let field = match kind {
        "p_leader" => core_leaders::compute_leaders(&tree.0, LeaderKind::PLeader, p),
        "restricted" => core_leaders::compute_restricted_p_leaders(&tree.0, p),
        "classical" => core_leaders::compute_leaders_inf(&tree.0),
        other => return Err(PyValueError::new_err(format!("unknown leader kind '{other}'"))),
    }
    .py_err()?;
    Ok((0..=field.max_scale()).map(|j| field.level(j).to_vec()).collect())
}

/// `S_j(p)` for every scale.
#[pyfunction]
fn structure_function(tree: &PyTree, p: f64) -> PyResult<Vec<f64>> {
    Ok(core_leaders::structure_function(&tree.0, p).py_err()?.values().to_vec())
}

#[pyfunction]
#[pyo3(signature = (tree, epsilon, alpha_grid, j_min = None, j_max = None, aggregation = "max_over_scales"))]
fn estimate_density<'py>(
    py: Python<'py>,
    tree: &PyTree,
    epsilon: f64,
    alpha_grid: Vec<f64>,
    j_min: Option<u32>,
    j_max: Option<u32>,
    aggregation: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let big_j = tree.0.max_scale();
    let w = window(j_min, j_max, ScaleWindow::with_margin(big_j, 0))?;
    let agg = self::aggregation(aggregation)?;
    to_dict(py, &largedev::estimate_density(&tree.0, epsilon, &alpha_grid, w, agg).py_err()?)
}

#[pyfunction]
#[pyo3(signature = (tree, p_grid, j_min = None, j_max = None, method = "regression"))]
fn estimate_scaling<'py>(
    py: Python<'py>,
    tree: &PyTree,
    p_grid: Vec<f64>,
    j_min: Option<u32>,
    j_max: Option<u32>,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let big_j = tree.0.max_scale();
    let w = window(j_min, j_max, ScaleWindow::with_margin(big_j, 0))?;
    to_dict(py, &largedev::estimate_scaling(&tree.0, &p_grid, w, scaling_method(method)?).py_err()?)
}

/// Leader and formalism spectra of a tree on `h_grid`.
#[pyfunction]
#[pyo3(signature = (tree, p, h_grid, epsilon = 0.1, leader_epsilon = None, aggregation = "max_over_scales"))]
fn empirical_spectrum<'py>(
    py: Python<'py>,
    tree: &PyTree,
    p: f64,
    h_grid: Vec<f64>,
    epsilon: f64,
    leader_epsilon: Option<f64>,
    aggregation: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = SpectrumOptions {
        epsilon,
        leader_epsilon,
        aggregation: self::aggregation(aggregation)?,
        ..SpectrumOptions::default()
    };
    let emp = py.allow_threads(|| largedev::empirical_spectrum(&tree.0, p, &h_grid, &opts));
    to_dict(py, &emp.py_err()?)
}

/// The formalism `D(h)` from `(alpha, rho)` points.
#[pyfunction]
fn formalism_d(density: Vec<(f64, f64)>, p: f64, h_grid: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(largedev::formalism_d(&density, p, &h_grid).py_err()?.d)
}

#[pyfunction]
fn h_max(density: Vec<(f64, f64)>, p: f64) -> f64 {
    largedev::h_max(&density, p)
}

#[pyfunction]
fn increasing_hull(values: Vec<f64>) -> Vec<f64> {
    largedev::increasing_hull(&values)
}

#[pymodule]
fn pymfa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PySpec>()?;
    m.add_function(wrap_pyfunction!(leaders, m)?)?;
    m.add_function(wrap_pyfunction!(structure_function, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_density, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(formalism_d, m)?)?;
    m.add_function(wrap_pyfunction!(h_max, m)?)?;
    m.add_function(wrap_pyfunction!(increasing_hull, m)?)?;
    m.add("RefusalError", m.py().get_type::<RefusalError>())?;
    m.add("EstimationError", m.py().get_type::<EstimationError>())?;
    Ok(())
}
