//! Python bindings: load documents, check compliance, run analyses.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use shapes_core::algebra::{Monomial, Sort, Var};
use shapes_core::cli::document;
use shapes_core::cli::output::{self, Run};
use shapes_core::derive::realized_check;
use shapes_core::search::{self, Config, DEFAULT_BOUND};
use shapes_core::unify::{ag_unify, bound_value};

#[pyclass(frozen, name = "Protocol")]
struct PyProtocol {
    inner: Arc<shapes_core::protocol::Protocol>,
}

#[pymethods]
impl PyProtocol {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn roles(&self) -> Vec<String> {
        self.inner.roles.iter().map(|r| r.name.clone()).collect()
    }

    /// Violations as strings; empty when compliant.
    fn check_compliant(&self) -> Vec<String> {
        shapes_core::protocol::check_compliant(&self.inner).violations.iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("<Protocol {} ({} roles)>", self.inner.name, self.inner.roles.len())
    }
}

#[pyclass(frozen, skip_from_py_object, name = "Skeleton")]
#[derive(Clone)]
struct PySkeleton {
    inner: shapes_core::skeleton::Skeleton,
}

#[pymethods]
impl PySkeleton {
    #[getter]
    fn protocol(&self) -> String {
        self.inner.protocol.name.clone()
    }

    #[getter]
    fn strands(&self) -> usize {
        self.inner.strands.len()
    }

    fn is_realized(&self) -> bool {
        realized_check(&self.inner).is_realized()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn iso(&self, other: &PySkeleton) -> bool {
        self.inner.iso(&other.inner)
    }

    fn covers(&self, shape: &PySkeleton) -> bool {
        search::covers(&self.inner, &shape.inner).is_some()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("<Skeleton {} ({} strands)>", self.inner.protocol.name, self.inner.strands.len())
    }
}

#[pyclass(frozen, name = "Analysis")]
struct PyAnalysis {
    run: Arc<Run>,
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn complete(&self) -> bool {
        self.run.analysis.complete
    }

    #[getter]
    fn steps(&self) -> usize {
        self.run.analysis.steps
    }

    #[getter]
    fn tree_size(&self) -> usize {
        self.run.analysis.tree.len()
    }

    fn shapes(&self) -> Vec<PySkeleton> {
        self.run.analysis.shape_skeletons().map(|s| PySkeleton { inner: s.clone() }).collect()
    }

    fn to_json(&self) -> String {
        output::json(std::slice::from_ref(&*self.run), false)
    }

    fn to_dot(&self) -> String {
        output::dot(std::slice::from_ref(&*self.run))
    }

    fn report(&self) -> String {
        output::text_report(std::slice::from_ref(&*self.run))
    }
}

/// Parses a document into its protocols and `(title, skeleton)` scenarios.
#[pyfunction]
fn load(text: &str) -> PyResult<(Vec<PyProtocol>, Vec<(String, PySkeleton)>)> {
    let (protos, scenarios) = document::load(text).map_err(PyValueError::new_err)?;
    Ok((
        protos.into_iter().map(|p| PyProtocol { inner: p }).collect(),
        scenarios.into_iter().map(|s| (s.title, PySkeleton { inner: s.skeleton })).collect(),
    ))
}

#[pyfunction]
#[pyo3(signature = (skeleton, bound = DEFAULT_BOUND, workers = 1, title = None))]
fn analyze(py: Python<'_>, skeleton: &PySkeleton, bound: usize, workers: usize, title: Option<String>) -> PyAnalysis {
    let sk = skeleton.inner.clone();
    let title = title.unwrap_or_else(|| sk.protocol.name.clone());
    let t0 = std::time::Instant::now();
    let analysis = py.detach(|| search::analyze(sk, Config { bound, workers }));
    let millis = t0.elapsed().as_secs_f64() * 1000.0;
    PyAnalysis { run: Arc::new(Run { file: "<python>".into(), title, analysis, millis }) }
}

/// Most general unifiers of two exponent monomials over transcendental
/// variables, given as `{name: degree}`.
#[pyfunction]
fn unify_exponents(
    lhs: BTreeMap<String, i64>,
    rhs: BTreeMap<String, i64>,
) -> Vec<BTreeMap<String, String>> {
    let mono = |m: &BTreeMap<String, i64>| Monomial::from_pairs(m.iter().map(|(v, d)| (Var::new(v, Sort::Trsc), *d)));
    ag_unify(&mono(&lhs), &mono(&rhs))
        .iter()
        .map(|s| s.iter().map(|(v, t)| (v.name.to_string(), bound_value(v, t).to_string())).collect())
        .collect()
}

#[pymodule]
fn shapes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProtocol>()?;
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(unify_exponents, m)?)?;
    Ok(())
}
