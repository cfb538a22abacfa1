//! Python module `hodgereg`: poses, viewing graphs, registration, embedding.
//!
//! Matrices cross the boundary as nested lists; twists as 6-lists `[phi, t]`.

use std::path::PathBuf;

use hodgereg::error::Error;
use hodgereg::graph::ViewingGraph as CoreGraph;
use hodgereg::io;
use hodgereg::pipeline::{register as core_register, Initialization, RegisterOptions};
use hodgereg::se3::{pose_exp, pose_log, Chart, Pose as CorePose, Twist};
use hodgereg::surface::{embed, EmbeddingOrder};
use hodgereg::synth::{generate_loop_scene, NoiseSpec, SceneParams};
use nalgebra::{Matrix4, Vector3, Vector6};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::SolverDiverged { .. } | Error::NoConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn chart(name: &str) -> PyResult<Chart> {
    name.parse().map_err(to_py)
}

fn vec6(v: Vec<f64>) -> PyResult<Vector6<f64>> {
    if v.len() != 6 {
        return Err(PyValueError::new_err(format!("twist needs 6 values, got {}", v.len())));
    }
    Ok(Vector6::from_column_slice(&v))
}

fn vec3(v: Vec<f64>, what: &str) -> PyResult<Vector3<f64>> {
    if v.len() != 3 {
        return Err(PyValueError::new_err(format!("{what} needs 3 values, got {}", v.len())));
    }
    Ok(Vector3::from_column_slice(&v))
}

/// Rigid motion of 3-space.
#[pyclass(name = "Pose", module = "hodgereg", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Pose {
    inner: CorePose,
}

impl From<CorePose> for Pose {
    fn from(inner: CorePose) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl Pose {
    /// Identity, or the pure translation `t`.
    #[new]
    #[pyo3(signature = (translation = None))]
    fn new(translation: Option<Vec<f64>>) -> PyResult<Self> {
        Ok(match translation {
            None => CorePose::identity().into(),
            Some(t) => CorePose::from_translation(vec3(t, "translation")?).into(),
        })
    }

    #[staticmethod]
    fn from_matrix(m: Vec<Vec<f64>>) -> PyResult<Self> {
        if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
            return Err(PyValueError::new_err("expected a 4x4 matrix"));
        }
        let mat = Matrix4::from_fn(|r, c| m[r][c]);
        Ok(CorePose::from_matrix4(&mat).map_err(to_py)?.into())
    }

    /// Translation `t` and quaternion `q` in `(x, y, z, w)` order.
    #[staticmethod]
    fn from_quaternion(translation: Vec<f64>, q: Vec<f64>) -> PyResult<Self> {
        if q.len() != 4 {
            return Err(PyValueError::new_err("quaternion needs 4 values (x, y, z, w)"));
        }
        let r = hodgereg::se3::Rotation3::from_quaternion(q[0], q[1], q[2], q[3]).map_err(to_py)?;
        Ok(CorePose::new(r, vec3(translation, "translation")?).into())
    }

    #[staticmethod]
    #[pyo3(signature = (twist, chart = "se3_log"))]
    fn exp(twist: Vec<f64>, chart: &str) -> PyResult<Self> {
        let c = self::chart(chart)?;
        Ok(pose_exp(&Twist::from_vector(&vec6(twist)?, c)).into())
    }

    #[pyo3(signature = (chart = "se3_log"))]
    fn log(&self, chart: &str) -> PyResult<Vec<f64>> {
        let x = pose_log(&self.inner, self::chart(chart)?).map_err(to_py)?;
        Ok(x.to_vector().iter().copied().collect())
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.to_matrix4();
        (0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect()).collect()
    }

    #[getter]
    fn translation(&self) -> Vec<f64> {
        self.inner.translation.iter().copied().collect()
    }

    #[getter]
    fn quaternion(&self) -> Vec<f64> {
        self.inner.rotation.to_quaternion().to_vec()
    }

    fn compose(&self, other: PyRef<'_, Pose>) -> Pose {
        self.inner.compose(&other.inner).into()
    }

    fn __matmul__(&self, other: PyRef<'_, Pose>) -> Pose {
        self.compose(other)
    }

    fn inverse(&self) -> Pose {
        self.inner.inverse().into()
    }

    fn transform_point(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.transform_point(&vec3(p, "point")?).iter().copied().collect())
    }

    /// `|P - I|_F`.
    fn frobenius_dev(&self) -> f64 {
        self.inner.frobenius_dev()
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation;
        let q = self.inner.rotation.to_quaternion();
        format!(
            "Pose(t=[{:.6}, {:.6}, {:.6}], q=[{:.6}, {:.6}, {:.6}, {:.6}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

/// Frames as nodes, relative motions `M_ij` (frame j into frame i) as edges.
#[pyclass(name = "ViewingGraph", module = "hodgereg", skip_from_py_object)]
#[derive(Clone)]
pub struct ViewingGraph {
    inner: CoreGraph,
}

#[pymethods]
impl ViewingGraph {
    #[new]
    fn new(node_count: usize) -> Self {
        Self {
            inner: CoreGraph::new(node_count),
        }
    }

    /// Reads a `VERTEX_SE3:QUAT` / `EDGE_SE3:QUAT` file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_pose_graph(&path).map_err(to_py)?.graph,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_pose_graph(&path, &self.inner, None).map_err(to_py)
    }

    fn add_edge(&mut self, i: usize, j: usize, measurement: PyRef<'_, Pose>) -> PyResult<usize> {
        self.inner.add_edge(i, j, measurement.inner).map_err(to_py)
    }

    fn measurement(&self, i: usize, j: usize) -> Option<Pose> {
        self.inner.measurement(i, j).map(Pose::from)
    }

    /// `(i, j, M_ij)` with `i < j`.
    fn edges(&self) -> Vec<(usize, usize, Pose)> {
        self.inner
            .edges()
            .iter()
            .map(|e| (e.i, e.j, e.measurement.into()))
            .collect()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn __repr__(&self) -> String {
        format!(
            "ViewingGraph(nodes={}, edges={})",
            self.inner.node_count(),
            self.inner.edge_count()
        )
    }
}

/// Result of [`register`]: final and starting poses, deviation after each pass.
#[pyclass(name = "Registration", module = "hodgereg", frozen)]
pub struct Registration {
    #[pyo3(get)]
    poses: Vec<Pose>,
    #[pyo3(get)]
    initial: Vec<Pose>,
    reports: Vec<hodgereg::pipeline::IterationReport>,
    #[pyo3(get)]
    genus: usize,
}

#[pymethods]
impl Registration {
    /// One dict per report; iteration 0 describes the raw measurements.
    fn reports<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.reports
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iteration", r.iteration)?;
                d.set_item("d_fundamental", r.d_fundamental)?;
                d.set_item("d_homology", r.d_homology)?;
                d.set_item("triangle_exactness", r.triangle_exactness)?;
                d.set_item("loop_exactness", r.loop_exactness)?;
                d.set_item("solver_residual", r.solver_residual)?;
                d.set_item("runtime_ms", r.runtime_ms)?;
                Ok(d)
            })
            .collect()
    }

    /// `D_fundamental + D_homology` per report.
    fn deviations(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.d_fundamental + r.d_homology).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (graph, iterations = 3, chart = "se3_log", init = "chained", embed_seed = None))]
fn register(
    py: Python<'_>,
    graph: PyRef<'_, ViewingGraph>,
    iterations: usize,
    chart: &str,
    init: &str,
    embed_seed: Option<u64>,
) -> PyResult<Registration> {
    let init = match init {
        "chained" => Initialization::Chained,
        "identity" => Initialization::Identity,
        other => return Err(PyValueError::new_err(format!("unknown init {other:?}"))),
    };
    let opts = RegisterOptions {
        iterations,
        chart: self::chart(chart)?,
        order: embed_seed.map_or(EmbeddingOrder::Ascending, EmbeddingOrder::SeededRandom),
        init,
        ..RegisterOptions::default()
    };
    let g = graph.inner.clone();
    let reg = py.detach(|| core_register(&g, &opts)).map_err(to_py)?;
    let poses = |t: &hodgereg::pipeline::Trajectory| t.poses.iter().copied().map(Pose::from).collect();
    Ok(Registration {
        poses: poses(reg.final_trajectory()),
        initial: poses(&reg.initial),
        reports: reg.reports.clone(),
        genus: reg.prepared.surface.genus(),
    })
}

/// `(V, E, F, genus)` of the rotation-system embedding.
#[pyfunction]
#[pyo3(signature = (graph, embed_seed = None))]
fn embed_summary(graph: PyRef<'_, ViewingGraph>, embed_seed: Option<u64>) -> PyResult<(usize, usize, usize, usize)> {
    let order = embed_seed.map_or(EmbeddingOrder::Ascending, EmbeddingOrder::SeededRandom);
    let s = embed(&graph.inner, order).map_err(to_py)?;
    Ok((s.vertex_count(), s.edge_count(), s.face_count(), s.genus()))
}

/// Seeded loop scene: noisy measurement graph on the centroid overlap graph and
/// the true poses.
#[pyfunction]
#[pyo3(signature = (n_frames = 12, seed = 0, sigma_rot = 0.05, sigma_trans = 0.05, noise_seed = None, points_per_frame = 1000))]
fn loop_scene(
    py: Python<'_>,
    n_frames: usize,
    seed: u64,
    sigma_rot: f64,
    sigma_trans: f64,
    noise_seed: Option<u64>,
    points_per_frame: usize,
) -> PyResult<(ViewingGraph, Vec<Pose>)> {
    let params = SceneParams {
        n_frames,
        seed,
        points_per_frame,
        ..SceneParams::default()
    };
    let noise = NoiseSpec {
        sigma_rot,
        sigma_trans,
        seed: noise_seed.unwrap_or(100 + seed),
    };
    let (g, truth) = py
        .detach(|| -> hodgereg::error::Result<_> {
            let scene = generate_loop_scene(&params)?.with_noise(noise);
            let opts = hodgereg::eval::EvalOptions::default();
            let topology = hodgereg::eval::evaluation_graph(&scene, hodgereg::eval::GraphMetric::Centroid, &opts)?;
            Ok((scene.noisy_measurements(&topology)?, scene.truth))
        })
        .map_err(to_py)?;
    Ok((
        ViewingGraph { inner: g },
        truth.poses.into_iter().map(Pose::from).collect(),
    ))
}

#[pymodule(name = "hodgereg")]
fn hodgereg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose>()?;
    m.add_class::<ViewingGraph>()?;
    m.add_class::<Registration>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(embed_summary, m)?)?;
    m.add_function(wrap_pyfunction!(loop_scene, m)?)?;
    Ok(())
}
