//! Python bindings: view graphs, synthetic generation, the four solvers and
//! the evaluation metrics. Locations cross the boundary as lists of `[x, y, z]`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bata_cli::{run_method, InitChoice, Method, SolverOptions};
use bata_core::synthetic::{gen_instance, gen_two_cluster, SynthConfig, SynthInstance, TwoClusterConfig};
use bata_core::{io, metrics, Edge, Error, Locations, UnitDirection, Vec3};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Singular(_) | Error::Degenerate(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn locations(points: Vec<[f64; 3]>) -> PyResult<Locations> {
    Locations::new(points.into_iter().map(Vec3::from).collect()).map_err(to_py)
}

fn points(t: &Locations) -> Vec<[f64; 3]> {
    t.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[pyclass(name = "ViewGraph", module = "pybata")]
struct PyViewGraph {
    inner: bata_core::ViewGraph,
}

#[pymethods]
impl PyViewGraph {
    /// `edges` holds `(i, j, [vx, vy, vz])`; directions are normalized.
    #[new]
    #[pyo3(signature = (n, edges, rot_residuals=None))]
    fn new(n: usize, edges: Vec<(usize, usize, [f64; 3])>, rot_residuals: Option<Vec<f64>>) -> PyResult<Self> {
        let edges = edges
            .into_iter()
            .map(|(i, j, v)| Ok(Edge::new(i, j, UnitDirection::normalize(Vec3::from(v))?)))
            .collect::<bata_core::Result<Vec<_>>>()
            .map_err(to_py)?;
        let mut g = bata_core::ViewGraph::new(n, edges).map_err(to_py)?;
        if let Some(rr) = rot_residuals {
            g = g.with_rot_residuals(&rr).map_err(to_py)?;
        }
        Ok(Self { inner: g })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        io::parse_view_graph(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_text(&self) -> String {
        io::write_view_graph(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    /// `(i, j, [vx, vy, vz], rot_residual)` per edge.
    fn edges(&self) -> Vec<(usize, usize, [f64; 3], f64)> {
        self.inner
            .edges()
            .iter()
            .map(|e| {
                let v = e.v.as_vec();
                (e.i, e.j, [v.x, v.y, v.z], e.rot_residual)
            })
            .collect()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn __repr__(&self) -> String {
        format!("ViewGraph(n={}, edges={})", self.inner.n(), self.inner.num_edges())
    }
}

fn instance_tuple(
    py: Python<'_>,
    inst: SynthInstance,
    rot_proxy: f64,
) -> PyResult<(PyViewGraph, Vec<[f64; 3]>, Bound<'_, PyDict>)> {
    let g = inst.with_rotation_proxy(0.0, rot_proxy).map_err(to_py)?;
    let extra = PyDict::new(py);
    extra.set_item("outlier", inst.outlier.clone())?;
    extra.set_item("angular_error", inst.angular_error.clone())?;
    extra.set_item("cluster_labels", inst.cluster_labels.clone())?;
    Ok((PyViewGraph { inner: g }, points(&inst.truth), extra))
}

/// Random instance: `(graph, truth, info)`; outlier edges carry `rot_proxy` as
/// their rotation residual.
#[pyfunction]
#[pyo3(signature = (n=200, p=0.3, q=0.0, sigma_deg=0.0, seed=0, rot_proxy=2.0))]
fn generate(
    py: Python<'_>,
    n: usize,
    p: f64,
    q: f64,
    sigma_deg: f64,
    seed: u64,
    rot_proxy: f64,
) -> PyResult<(PyViewGraph, Vec<[f64; 3]>, Bound<'_, PyDict>)> {
    let inst = gen_instance(&SynthConfig { n, p, q, sigma_deg, seed }).map_err(to_py)?;
    instance_tuple(py, inst, rot_proxy)
}

#[pyfunction]
#[pyo3(signature = (n_per_cluster, separation, p=0.3, q=0.0, sigma_deg=0.0, seed=0, rot_proxy=2.0))]
#[allow(clippy::too_many_arguments)]
fn generate_two_cluster(
    py: Python<'_>,
    n_per_cluster: usize,
    separation: f64,
    p: f64,
    q: f64,
    sigma_deg: f64,
    seed: u64,
    rot_proxy: f64,
) -> PyResult<(PyViewGraph, Vec<[f64; 3]>, Bound<'_, PyDict>)> {
    let cfg = TwoClusterConfig { n_per_cluster, separation, p, q, sigma_deg, seed };
    let inst = gen_two_cluster(&cfg).map_err(to_py)?;
    instance_tuple(py, inst, rot_proxy)
}

/// Solves with `method` in {bata, revisedlud, lud, onedsfm}; returns
/// `(locations, diagnostics)`.
#[pyfunction]
#[pyo3(signature = (graph, method="bata", seed=0, loss=None, alpha=None, delta=None, beta=None,
                    irls_iter=None, bcd_iter=None, conv_tol=None, init=None, init_locations=None, c=None))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    graph: PyRef<'_, PyViewGraph>,
    method: &str,
    seed: u64,
    loss: Option<String>,
    alpha: Option<f64>,
    delta: Option<f64>,
    beta: Option<f64>,
    irls_iter: Option<usize>,
    bcd_iter: Option<usize>,
    conv_tol: Option<f64>,
    init: Option<&str>,
    init_locations: Option<Vec<[f64; 3]>>,
    c: Option<f64>,
) -> PyResult<(Vec<[f64; 3]>, Bound<'py, PyDict>)> {
    let method: Method = method.parse().map_err(to_py)?;
    let init = init.map(str::parse::<InitChoice>).transpose().map_err(to_py)?;
    let opts = SolverOptions {
        loss,
        alpha,
        delta,
        beta,
        irls_iter,
        bcd_iter,
        conv_tol,
        init,
        init_locations: init_locations.map(locations).transpose()?,
        c,
    };
    let g = &graph.inner;
    let (t, diag) = py.detach(|| run_method(method, g, &opts, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("objective_trace", diag.objective_trace)?;
    d.set_item("iterations", diag.outer_iterations_used)?;
    d.set_item("converged", diag.converged)?;
    d.set_item("weights", diag.weights)?;
    d.set_item("scales", diag.scales)?;
    Ok((points(&t), d))
}

#[pyfunction]
fn nrmse(est: Vec<[f64; 3]>, truth: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::nrmse(&locations(est)?, &locations(truth)?).map_err(to_py)
}

/// `(r1, r2)`: percentile ratios of baseline lengths and of centered norms.
#[pyfunction]
fn squash_ratios(graph: PyRef<'_, PyViewGraph>, t: Vec<[f64; 3]>) -> PyResult<(f64, f64)> {
    let r = metrics::squash_r1_r2(&graph.inner, &locations(t)?).map_err(to_py)?;
    Ok((r.r1, r.r2))
}

#[pyfunction]
fn squash_r3(t: Vec<[f64; 3]>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::squash_r3(&locations(t)?, &labels).map_err(to_py)
}

/// Robust similarity alignment of `est` onto `truth`.
#[pyfunction]
#[pyo3(signature = (est, truth, rounds=10))]
fn robust_align<'py>(
    py: Python<'py>,
    est: Vec<[f64; 3]>,
    truth: Vec<[f64; 3]>,
    rounds: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::robust_align(&locations(est)?, &locations(truth)?, rounds).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("median_error", r.median_error)?;
    d.set_item("mean_error", r.mean_error)?;
    d.set_item("errors", r.errors)?;
    d.set_item("scale", r.similarity.scale)?;
    d.set_item("inliers", r.inliers)?;
    Ok(d)
}

#[pymodule]
fn pybata(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyViewGraph>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_two_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(squash_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(squash_r3, m)?)?;
    m.add_function(wrap_pyfunction!(robust_align, m)?)?;
    Ok(())
}
