//! Python bindings: models, Dirac operators, estimators and the config runner.

use std::sync::Arc;

use heatdim::dims::{self, SpectrumTarget};
use heatdim::dirac::{self, HodgeDirac};
use heatdim::experiment::{self, ExperimentConfig};
use heatdim::forms::{self, FiniteModel, TorusFourierModel};
use heatdim::semigroup::{self, TimeGrid};
use heatdim::{fixtures, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

create_exception!(heatdim, NumericalError, PyException, "A numerical kernel failed (non-convergence, empty fit window, ...).");

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else if matches!(e.root(), Error::Io { .. }) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for heatdim::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let l = PyList::empty(py);
            for x in a {
                l.append(value_to_py(py, x)?)?;
            }
            l.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, value_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Any serializable report as nested dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn grid(times: Option<Vec<f64>>, lambda_max: f64) -> PyResult<TimeGrid> {
    match times {
        Some(t) => TimeGrid::explicit(t).py(),
        None => Ok(dims::default_time_grid(lambda_max)),
    }
}

/// A finite measure space with a weighted graph and its generator `A`.
#[pyclass(name = "Model", frozen, module = "heatdim")]
pub struct PyModel {
    inner: Arc<FiniteModel>,
}

#[pymethods]
impl PyModel {
    /// Nearest-neighbour lattice on `(Z_N)^d`, `d` in 1..=3.
    #[staticmethod]
    fn torus(dim: usize, side: usize) -> PyResult<Self> {
        Ok(PyModel { inner: Arc::new(forms::build_torus_lattice(dim, side).py()?) })
    }

    /// Circle grid with conductances `a_e` in `[delta, gamma]`; drawn from
    /// `seed` when `coefficients` is omitted.
    #[staticmethod]
    #[pyo3(signature = (side, coefficients=None, delta=0.5, gamma=2.0, seed=0))]
    fn elliptic(side: usize, coefficients: Option<Vec<f64>>, delta: f64, gamma: f64, seed: u64) -> PyResult<Self> {
        let c = coefficients.unwrap_or_else(|| forms::random_coefficients(side, delta, gamma, seed));
        Ok(PyModel { inner: Arc::new(forms::build_elliptic_grid(side, &c, delta, gamma).py()?) })
    }

    /// Level-`m` Sierpiński gasket approximation.
    #[staticmethod]
    fn gasket(level: usize) -> PyResult<Self> {
        Ok(PyModel { inner: Arc::new(forms::build_sierpinski(level).py()?) })
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: Arc::new(forms::build_from_file(path).py()?) })
    }

    /// Parses the `graph` / `measure` / `edge` text format.
    #[staticmethod]
    #[pyo3(signature = (text, origin="<string>"))]
    fn from_graph_text(text: &str, origin: &str) -> PyResult<Self> {
        Ok(PyModel { inner: Arc::new(forms::parse_graph(text, origin).py()?) })
    }

    /// Builds a model from vertex weights and `(u, v, w)` edges.
    #[staticmethod]
    #[pyo3(signature = (measure, edges, label="graph"))]
    fn from_edges(measure: Vec<f64>, edges: Vec<(usize, usize, f64)>, label: &str) -> PyResult<Self> {
        let n = measure.len();
        let space = heatdim::FiniteMeasureSpace::new(measure).py()?;
        let graph = heatdim::WeightedGraph::new(n, edges).py()?;
        Ok(PyModel { inner: Arc::new(FiniteModel::new(label, space, graph).py()?) })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.graph().num_edges()
    }

    #[getter]
    fn num_components(&self) -> usize {
        self.inner.graph().num_components()
    }

    #[getter]
    fn measure(&self) -> Vec<f64> {
        self.inner.space().weights().to_vec()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.graph().edges().iter().map(|e| (e.u, e.v, e.w)).collect()
    }

    fn lambda_max(&self) -> PyResult<f64> {
        self.inner.lambda_max().py()
    }

    fn spectral_gap(&self) -> PyResult<Option<f64>> {
        self.inner.spectral_gap().py()
    }

    /// Eigenvalues of `A`, ascending.
    fn eigenvalues(&self) -> PyResult<Vec<f64>> {
        self.inner.eigenvalues().py()
    }

    /// `A` in function coordinates, as a list of rows.
    fn generator(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.generator())
    }

    fn apply_generator(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&f)?;
        Ok(self.inner.apply_generator(&f))
    }

    fn dirichlet_energy(&self, f: Vec<f64>, g: Vec<f64>) -> PyResult<f64> {
        forms::dirichlet_energy(&self.inner, &f, &g).py()
    }

    /// `p_t(x, y)` as a list of rows.
    fn heat_kernel(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(semigroup::heat_kernel(&self.inner, t).py()?.values()))
    }

    #[pyo3(signature = (t, restricted=true))]
    fn heat_trace(&self, t: f64, restricted: bool) -> PyResult<f64> {
        semigroup::heat_trace(&self.inner, t, restricted).py()
    }

    fn kernel_identities<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &semigroup::kernel_identities(&self.inner, t).py()?)
    }

    /// Every exact identity that fits the default size limits.
    fn identity_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &experiment::identity_report(&self.inner, experiment::IdentityLimits::default()).py()?)
    }

    fn to_graph_text(&self) -> String {
        forms::to_graph_text(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, n={}, edges={})", self.inner.label(), self.inner.n(), self.inner.graph().num_edges())
    }
}

impl PyModel {
    fn check_len(&self, f: &[f64]) -> PyResult<()> {
        if f.len() != self.inner.n() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", self.inner.n(), f.len())));
        }
        Ok(())
    }
}

/// Hodge–Dirac operator `[[0, ∂*], [∂, 0]]` of a model.
#[pyclass(name = "Dirac", frozen, module = "heatdim")]
pub struct PyDirac {
    inner: HodgeDirac,
}

#[pymethods]
impl PyDirac {
    #[new]
    fn new(model: &PyModel) -> Self {
        PyDirac { inner: HodgeDirac::from_model(Arc::clone(&model.inner)) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `D` in function coordinates.
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix())
    }

    /// `∂` as an `|E| × n` matrix.
    fn derivation(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.derivation().matrix())
    }

    fn apply_derivation(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        if f.len() != self.inner.model().n() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", self.inner.model().n(), f.len())));
        }
        Ok(self.inner.derivation().apply(&f))
    }

    fn square_block_error(&self) -> f64 {
        self.inner.square_block_error()
    }

    /// Eigenvalues of `D²`, ascending.
    fn squared_spectrum(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.squared_spectrum().py()?.0)
    }

    fn commutator_norm(&self, f: Vec<f64>) -> PyResult<f64> {
        dirac::commutator_norm(&self.inner, &f).py()
    }

    fn susy_check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &experiment::identities::susy_check(self.inner.derivation()).py()?)
    }

    /// Connes distance with its certified interval; `inf` across components.
    #[pyo3(signature = (x, y, tol=1e-3))]
    fn connes_distance<'py>(&self, py: Python<'py>, x: usize, y: usize, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        match dirac::connes_distance(&self.inner, x, y, tol) {
            Ok(d) => to_py(py, &d),
            Err(Error::Unbounded { .. }) => {
                let d = PyDict::new(py);
                d.set_item("value", f64::INFINITY)?;
                Ok(d.into_any())
            }
            Err(e) => Err(py_err(e)),
        }
    }
}

/// CV local dimension from `max_x p_t(x, x)`.
#[pyfunction]
#[pyo3(signature = (model, times=None, window=None))]
fn cv_dimension<'py>(py: Python<'py>, model: &PyModel, times: Option<Vec<f64>>, window: Option<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    let g = grid(times, model.inner.lambda_max().py()?)?;
    to_py(py, &dims::cv_local_dimension(&model.inner, &g, window).py()?)
}

/// Heat-trace dimension of `D²` (`target="dirac"`) or `A` (`"generator"`).
#[pyfunction]
#[pyo3(signature = (model, target="dirac", times=None, window=None))]
fn heat_trace_dimension<'py>(
    py: Python<'py>,
    model: &PyModel,
    target: &str,
    times: Option<Vec<f64>>,
    window: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid(times, model.inner.lambda_max().py()?)?;
    let hd = HodgeDirac::from_model(Arc::clone(&model.inner));
    let t = match target {
        "dirac" => SpectrumTarget::Dirac(&hd),
        "generator" => SpectrumTarget::Generator(&model.inner),
        other => return Err(PyValueError::new_err(format!("target must be \"dirac\" or \"generator\", got {other:?}"))),
    };
    to_py(py, &dims::heat_trace_dimension(t, &g, window).py()?)
}

/// Weyl counting dimension of an eigenvalue list.
#[pyfunction]
#[pyo3(signature = (eigenvalues, window=None))]
fn weyl_dimension<'py>(py: Python<'py>, eigenvalues: Vec<f64>, window: Option<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dims::weyl_counting(&eigenvalues, None, window).py()?)
}

/// Abscissa-of-convergence probe across refinement levels.
#[pyfunction]
#[pyo3(signature = (levels, alphas=None))]
fn zeta_probe<'py>(py: Python<'py>, levels: Vec<Vec<f64>>, alphas: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let alphas = alphas.unwrap_or_else(experiment::config::default_alphas);
    to_py(py, &dims::zeta_probe(&levels, &alphas).py()?)
}

/// Rapid-decay profile of the free group on `k` generators.
#[pyfunction]
fn rapid_decay<'py>(py: Python<'py>, k: usize, r: u32) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dims::rapid_decay_profile(k, r, &dims::default_rapid_decay_grid(), None).py()?)
}

/// Dimension of `T^d` from the sup of its heat kernel.
#[pyfunction]
#[pyo3(signature = (dim, depth=20))]
fn torus_cb_dimension<'py>(py: Python<'py>, dim: usize, depth: usize) -> PyResult<Bound<'py, PyAny>> {
    let g = TimeGrid::dyadic(depth);
    let fourier = TorusFourierModel::for_min_time(dim, g.min()).py()?;
    to_py(py, &dims::torus_cb_dimension(&fourier, &g, None).py()?)
}

/// Passes iff `spectral <= cv + slack`.
#[pyfunction]
#[pyo3(signature = (model, slack=0.1))]
fn theorem_gate<'py>(py: Python<'py>, model: &PyModel, slack: f64) -> PyResult<Bound<'py, PyAny>> {
    let g = dims::default_time_grid(model.inner.lambda_max().py()?);
    let cv = dims::cv_local_dimension(&model.inner, &g, None).py()?;
    let hd = HodgeDirac::from_model(Arc::clone(&model.inner));
    let ht = dims::heat_trace_dimension(SpectrumTarget::Dirac(&hd), &g, None).py()?;
    to_py(py, &dims::theorem_gate(&ht.fit, &cv.estimate.fit, slack))
}

/// Runs a config given as text; relative paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(signature = (text, base_dir="."))]
fn run_config<'py>(py: Python<'py>, text: &str, base_dir: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::parse(text, "<config>", base_dir).py()?;
    to_py(py, &experiment::run(&cfg).py()?.report)
}

#[pyfunction]
#[pyo3(signature = (seed=0))]
fn verify<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &experiment::verify(seed).py()?)
}

/// The small fixtures shipped with the library.
#[pyfunction]
fn fixture(name: &str) -> PyResult<PyModel> {
    let m = match name {
        "two_point" => fixtures::two_point(),
        "path3" => fixtures::path3(),
        "c4" => forms::parse_graph(fixtures::C4_GRAPH, "c4.graph"),
        "two_c4" => forms::parse_graph(fixtures::TWO_C4_GRAPH, "two_c4.graph"),
        "gasket1" => forms::parse_graph(fixtures::GASKET1_GRAPH, "gasket1.graph"),
        other => return Err(PyValueError::new_err(format!("unknown fixture {other:?}"))),
    };
    Ok(PyModel { inner: Arc::new(m.py()?) })
}

#[pymodule]
#[pyo3(name = "heatdim")]
pub fn heatdim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDirac>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(cv_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(heat_trace_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(weyl_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(zeta_probe, m)?)?;
    m.add_function(wrap_pyfunction!(rapid_decay, m)?)?;
    m.add_function(wrap_pyfunction!(torus_cb_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(theorem_gate, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    Ok(())
}
