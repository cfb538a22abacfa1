//! Iterative global registration: measurements to a 1-form, Hodge solve, pose update.
//!
//! Poses `T_i` map frame `i` into the world and a measurement `M_ij` maps frame
//! `j` into frame `i`, so a consistent edge has `T_i M_ij T_j^-1 = I`. Each pass
//! takes the residual `r(i,j) = log(T_i M_ij T_j^-1)`, extracts its exact part
//! `df` and sets `T_i <- exp(f_i) T_i`. To first order the new residual is
//! `exp(f_i) E_ij exp(-f_j)`, i.e. `r - (f_j - f_i) = r - df`, so the exact part
//! is removed and only the part that no vertex potential explains stays.

use std::time::Instant;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::eval::loop_deviation;
use crate::graph::{fundamental_cycles, Loop, ViewingGraph};
use crate::hodge::{
    cotangent_weights, exactness_check, extend_form, solve_exact_with, HodgeSplit, LieOneForm, PairWeights,
    SolverOptions,
};
use crate::se3::{pose_exp, pose_log, Chart, Pose};
use crate::surface::{embed, homology_basis, triangulate, EmbeddingOrder, HalfedgeSurface};

/// Measurements must stay this far below a half turn.
pub const ANGLE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Frame-to-world poses.
    pub poses: Vec<Pose>,
    pub iteration: usize,
}

impl Trajectory {
    pub fn identity(n: usize) -> Self {
        Self {
            poses: vec![Pose::identity(); n],
            iteration: 0,
        }
    }

    /// Composes measurements down the BFS tree from frame 0.
    pub fn chained(g: &ViewingGraph) -> Result<Self> {
        g.ensure_connected()?;
        let tree = g.bfs_tree(0);
        let mut poses = vec![Pose::identity(); g.node_count()];
        for &v in tree.order.iter().skip(1) {
            let p = tree.parent[v].expect("non-root vertex has a parent");
            let m = g.measurement(p, v).expect("tree edge is a graph edge");
            poses[v] = poses[p].compose(&m);
        }
        Ok(Self { poses, iteration: 0 })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// `T_i^-1 T_j`, the motion these poses imply for edge `(i, j)`.
    pub fn relative(&self, i: usize, j: usize) -> Pose {
        self.poses[i].inverse().compose(&self.poses[j])
    }

    /// Largest Frobenius deviation of `T_0^-1 T_i` from `S_0^-1 S_i`.
    pub fn gauge_distance(&self, other: &Trajectory) -> f64 {
        let a0 = self.poses[0].inverse();
        let b0 = other.poses[0].inverse();
        self.poses
            .iter()
            .zip(&other.poses)
            .map(|(a, b)| {
                let a = a0.compose(a);
                let b = b0.compose(b);
                a.inverse().compose(&b).frobenius_dev()
            })
            .fold(0.0, f64::max)
    }
}

fn check_angles(g: &ViewingGraph) -> Result<()> {
    let limit = std::f64::consts::PI - ANGLE_MARGIN;
    let bad: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .filter(|e| e.measurement.rotation.angle() >= limit)
        .map(|e| (e.i, e.j))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::MeasurementsNearPi { edges: bad })
    }
}

/// `omega(i, j) = log M_ij` on every graph edge.
pub fn initial_form(g: &ViewingGraph, chart: Chart) -> Result<LieOneForm> {
    check_angles(g)?;
    let mut omega = LieOneForm::new(chart);
    for e in g.edges() {
        omega.set(e.i, e.j, pose_log(&e.measurement, chart)?);
    }
    Ok(omega)
}

/// `r(i, j) = log(T_i M_ij T_j^-1)` on every graph edge.
pub fn residual_form(g: &ViewingGraph, traj: &Trajectory, chart: Chart) -> Result<LieOneForm> {
    if traj.len() != g.node_count() {
        return Err(Error::invalid(format!(
            "trajectory has {} poses for {} frames",
            traj.len(),
            g.node_count()
        )));
    }
    let values = g
        .edges()
        .par_iter()
        .map(|e| {
            let t = &traj.poses;
            let err = t[e.i].compose(&e.measurement).compose(&t[e.j].inverse());
            pose_log(&err, chart)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = LieOneForm::new(chart);
    for (e, x) in g.edges().iter().zip(values) {
        r.set(e.i, e.j, x);
    }
    Ok(r)
}

/// Surface and weights that stay fixed across passes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub surface: HalfedgeSurface,
    pub weights: PairWeights,
    pub fundamental: Vec<Loop>,
    pub homology: Vec<Loop>,
}

impl Prepared {
    pub fn new(g: &ViewingGraph, order: EmbeddingOrder) -> Result<Self> {
        g.ensure_connected()?;
        let surface = triangulate(&embed(g, order)?)?;
        let weights = cotangent_weights(&surface);
        let homology = homology_basis(&surface);
        Ok(Self {
            surface,
            weights,
            fundamental: fundamental_cycles(g),
            homology,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PassOutcome {
    pub trajectory: Trajectory,
    /// Residual extended to the surface, before the update.
    pub residual: LieOneForm,
    pub split: HodgeSplit,
}

/// Residual of `traj` extended to the surface, and its Hodge split.
pub fn analyze(
    g: &ViewingGraph,
    prep: &Prepared,
    traj: &Trajectory,
    chart: Chart,
    solver: &SolverOptions,
) -> Result<(LieOneForm, HodgeSplit)> {
    let r0 = residual_form(g, traj, chart)?;
    let residual = extend_form(g, &prep.surface, &r0)?;
    let split = solve_exact_with(&prep.surface, &prep.weights, &residual, solver)?;
    Ok((residual, split))
}

/// `T_i <- exp(f_i) T_i`, then re-anchored so that `T_0 = I`.
pub fn apply_potential(traj: &Trajectory, split: &HodgeSplit) -> Trajectory {
    let f = split.potential.frame_values();
    let mut poses: Vec<Pose> = traj
        .poses
        .iter()
        .zip(&f)
        .map(|(t, fi)| pose_exp(fi).compose(t))
        .collect();
    // f(0) = 0 leaves T_0 alone; only a trajectory that did not start anchored moves
    if poses[0] != Pose::identity() {
        let re = poses[0].inverse();
        for p in poses.iter_mut() {
            *p = re.compose(p);
        }
    }
    Trajectory {
        poses,
        iteration: traj.iteration + 1,
    }
}

/// One pass: residual, extension, exact part, pose update.
pub fn hodge_iteration(
    g: &ViewingGraph,
    prep: &Prepared,
    traj: &Trajectory,
    chart: Chart,
    solver: &SolverOptions,
) -> Result<PassOutcome> {
    let (residual, split) = analyze(g, prep, traj, chart, solver)?;
    Ok(PassOutcome {
        trajectory: apply_potential(traj, &split),
        residual,
        split,
    })
}

/// Where the first pass starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Measurements composed along the BFS tree from frame 0.
    #[default]
    Chained,
    /// Every pose at the identity.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegisterOptions {
    pub iterations: usize,
    pub chart: Chart,
    pub order: EmbeddingOrder,
    pub solver: SolverOptions,
    pub init: Initialization,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self {
            iterations: 3,
            chart: Chart::Se3Log,
            order: EmbeddingOrder::Ascending,
            solver: SolverOptions::default(),
            init: Initialization::Chained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    /// 0 describes the raw measurements, `k >= 1` the k-th pass.
    pub iteration: usize,
    pub d_fundamental: f64,
    pub d_homology: f64,
    /// Worst triangle sum of the `df` this pass applied.
    pub triangle_exactness: f64,
    /// Worst sum of that `df` along a fundamental cycle or homology loop.
    pub loop_exactness: f64,
    /// Relative residual of the solve that measured this report.
    pub solver_residual: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub prepared: Prepared,
    pub initial: Trajectory,
    /// Trajectory after each pass.
    pub passes: Vec<Trajectory>,
    /// Raw measurements first, then one entry per pass.
    pub reports: Vec<IterationReport>,
}

impl Registration {
    pub fn final_trajectory(&self) -> &Trajectory {
        self.passes.last().unwrap_or(&self.initial)
    }
}

/// Motion of a surface pair under the raw measurements: the graph edge itself,
/// or the product along the shortest graph path between the anchors.
pub fn measured_motion(g: &ViewingGraph, s: &HalfedgeSurface, a: usize, b: usize) -> Option<Pose> {
    let (x, y) = (s.anchor(a), s.anchor(b));
    if x == y {
        return Some(Pose::identity());
    }
    if let Some(m) = g.measurement(x, y) {
        return Some(m);
    }
    let path = g.bfs_tree(x).path_to_root(y)?;
    let mut m = Pose::identity();
    for w in path.windows(2).rev() {
        m = m.compose(&g.measurement(w[1], w[0])?);
    }
    Some(m)
}

/// Motion `T_a^-1 exp(df(a, b)) T_b` left on pair `(a, b)` once the pass has
/// removed the exact part. When `df` equals the residual this is the
/// measurement itself.
pub fn corrected_motion(s: &HalfedgeSurface, before: &Trajectory, df: &LieOneForm, a: usize, b: usize) -> Option<Pose> {
    let x = df.get(a, b)?;
    let ta = before.poses[s.anchor(a)];
    let tb = before.poses[s.anchor(b)];
    Some(ta.inverse().compose(&pose_exp(&x)).compose(&tb))
}

fn loop_sum(form: &LieOneForm, loops: &[Loop]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, l) in loops.iter().enumerate() {
        let sum = form
            .integrate(&l.vertices)
            .ok_or_else(|| Error::invalid(format!("1-form undefined along loop {k}")))?;
        worst = worst.max(sum.norm_inf());
    }
    Ok(worst)
}

/// Loop deviation left at `traj`: the exact part `df` of its residual, carried
/// by `T_a^-1 exp(df(a, b)) T_b`, composed around every loop. Zero when the
/// part of the measurements that poses can explain is consistent.
pub fn deviation_at(prep: &Prepared, traj: &Trajectory, split: &HodgeSplit) -> Result<(f64, f64)> {
    let s = &prep.surface;
    let df = &split.exact;
    let motion = |a: usize, b: usize| corrected_motion(s, traj, df, a, b);
    Ok((
        loop_deviation(&prep.fundamental, motion)?,
        loop_deviation(&prep.homology, motion)?,
    ))
}

/// Embeds once, then runs `opts.iterations` passes.
///
/// Report 0 holds the deviation of the raw measurements; report `k` the
/// deviation left at the trajectory after pass `k` (see [`deviation_at`]). The
/// split that measures pass `k` is also the one pass `k + 1` applies, so a run
/// costs one solve more than it has passes.
pub fn register(g: &ViewingGraph, opts: &RegisterOptions) -> Result<Registration> {
    if opts.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    check_angles(g)?;
    let start = Instant::now();
    let prepared = Prepared::new(g, opts.order)?;
    let s = &prepared.surface;
    let initial = match opts.init {
        Initialization::Chained => Trajectory::chained(g)?,
        Initialization::Identity => Trajectory::identity(g.node_count()),
    };
    let (_, mut split) = analyze(g, &prepared, &initial, opts.chart, &opts.solver)?;
    let raw = IterationReport {
        iteration: 0,
        d_fundamental: loop_deviation(&prepared.fundamental, |a, b| g.measurement(a, b))?,
        d_homology: loop_deviation(&prepared.homology, |a, b| measured_motion(g, s, a, b))?,
        triangle_exactness: 0.0,
        loop_exactness: 0.0,
        solver_residual: split.relative_residual,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let mut reports = vec![raw];
    let mut passes = Vec::with_capacity(opts.iterations);
    let mut current = initial.clone();
    for _ in 0..opts.iterations {
        let t = Instant::now();
        let df = &split.exact;
        let triangle_exactness = exactness_check(s, df)?;
        let loop_exactness = loop_sum(df, &prepared.fundamental)?.max(loop_sum(df, &prepared.homology)?);
        current = apply_potential(&current, &split);
        let (_, next) = analyze(g, &prepared, &current, opts.chart, &opts.solver)?;
        split = next;
        let (d_fundamental, d_homology) = deviation_at(&prepared, &current, &split)?;
        reports.push(IterationReport {
            iteration: current.iteration,
            d_fundamental,
            d_homology,
            triangle_exactness,
            loop_exactness,
            solver_residual: split.relative_residual,
            runtime_ms: t.elapsed().as_secs_f64() * 1e3,
        });
        passes.push(current.clone());
    }
    Ok(Registration {
        prepared,
        initial,
        passes,
        reports,
    })
}

/// Every cloud moved into the world by its pose, concatenated in frame order.
/// Normals are kept only when every cloud has them.
pub fn fuse(clouds: &[PointCloud], traj: &Trajectory) -> Result<PointCloud> {
    if clouds.len() != traj.len() {
        return Err(Error::invalid(format!(
            "{} clouds for {} poses",
            clouds.len(),
            traj.len()
        )));
    }
    let keep_normals = clouds.iter().all(|c| c.normals.is_some());
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (c, t) in clouds.iter().zip(&traj.poses) {
        let moved = c.transformed(t);
        points.extend(moved.points);
        if keep_normals {
            normals.extend(moved.normals.unwrap_or_default());
        }
    }
    Ok(PointCloud {
        points,
        normals: keep_normals.then_some(normals),
    })
}
