//! Twist-valued 1-forms on the embedded surface and their exact part.
//!
//! The exact part `df` of a 1-form `omega` is found from the Poisson problem
//!
//! ```text
//!     sum_j w_ij (f_j - f_i) = sum_j w_ij omega(i, j)      for every vertex i
//! ```
//!
//! which is the normal equation of `min_f sum_ij w_ij |f_j - f_i - omega(i, j)|^2`.
//! The left side is the weighted graph Laplacian, the right side the
//! coboundary of `omega`. Each of the six twist coordinates is an independent
//! right-hand side against the same matrix. The gauge is fixed by `f(0) = 0`,
//! which removes vertex 0 from the system and leaves it positive definite.
//!
//! Under the unit-length metric every corner angle is 60 degrees, so each
//! triangle incident to a vertex pair adds `cot(60) / 2 = 1 / (2 sqrt 3)` to its
//! weight. Parallel surface edges between the same pair accumulate.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use nalgebra::Vector6;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{BfsTree, FrameId, ViewingGraph};
use crate::se3::{Chart, Twist};
use crate::sparse::{conjugate_gradient, CsrMatrix};
use crate::surface::HalfedgeSurface;

/// Contribution of one incident triangle to a pair weight.
pub fn unit_triangle_weight() -> f64 {
    0.5 / 3f64.sqrt()
}

/// Antisymmetric twist-valued function on unordered vertex pairs.
///
/// Values are stored for the canonical orientation `i < j`; evaluating `(j, i)`
/// negates.
#[derive(Debug, Clone, PartialEq)]
pub struct LieOneForm {
    chart: Chart,
    values: BTreeMap<(usize, usize), Vector6<f64>>,
}

impl LieOneForm {
    pub fn new(chart: Chart) -> Self {
        Self {
            chart,
            values: BTreeMap::new(),
        }
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sets the value on the oriented pair `(i, j)`.
    pub fn set(&mut self, i: usize, j: usize, x: Twist) {
        assert_eq!(x.chart, self.chart, "twist chart differs from the form's chart");
        assert_ne!(i, j, "1-forms live on edges, not vertices");
        self.set_raw(i, j, x.to_vector());
    }

    pub(crate) fn set_raw(&mut self, i: usize, j: usize, v: Vector6<f64>) {
        if i < j {
            self.values.insert((i, j), v);
        } else {
            self.values.insert((j, i), -v);
        }
    }

    pub(crate) fn raw(&self, i: usize, j: usize) -> Option<Vector6<f64>> {
        if i < j {
            self.values.get(&(i, j)).copied()
        } else {
            self.values.get(&(j, i)).map(|v| -v)
        }
    }

    /// Value on the oriented pair `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> Option<Twist> {
        self.raw(i, j).map(|v| Twist::from_vector(&v, self.chart))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.values.contains_key(&(i.min(j), i.max(j)))
    }

    /// Canonical pairs with their raw 6-vectors.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), Twist)> + '_ {
        self.values
            .iter()
            .map(move |(&k, v)| (k, Twist::from_vector(v, self.chart)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values.keys().copied()
    }

    /// Sum of the form along a walk of vertices.
    pub fn integrate(&self, walk: &[usize]) -> Option<Twist> {
        let mut sum = Vector6::zeros();
        for w in walk.windows(2) {
            sum += self.raw(w[0], w[1])?;
        }
        Some(Twist::from_vector(&sum, self.chart))
    }

    /// Largest absolute coordinate over all pairs.
    pub fn max_abs(&self) -> f64 {
        self.values.values().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// `a * self + b * other` on the union of supports.
    pub fn combine(&self, a: f64, other: &LieOneForm, b: f64) -> LieOneForm {
        assert_eq!(self.chart, other.chart, "forms from different charts");
        let mut out = LieOneForm::new(self.chart);
        for (&k, v) in &self.values {
            out.values.insert(k, a * v);
        }
        for (&k, v) in &other.values {
            *out.values.entry(k).or_insert_with(Vector6::zeros) += b * v;
        }
        out
    }

    pub fn scaled(&self, a: f64) -> LieOneForm {
        LieOneForm {
            chart: self.chart,
            values: self.values.iter().map(|(&k, v)| (k, a * v)).collect(),
        }
    }
}

/// Per-vertex twist with `f(gauge_root) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPotential {
    chart: Chart,
    values: Vec<Vector6<f64>>,
    gauge_root: usize,
    frame_count: usize,
}

impl VertexPotential {
    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn gauge_root(&self) -> usize {
        self.gauge_root
    }

    /// Number of surface vertices, auxiliary ones included.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, v: usize) -> Twist {
        Twist::from_vector(&self.values[v], self.chart)
    }

    /// Potentials of the original frames only.
    pub fn frame_values(&self) -> Vec<Twist> {
        (0..self.frame_count).map(|v| self.get(v)).collect()
    }

    /// `df(i, j) = f(j) - f(i)` on the given canonical pairs.
    pub fn differential<'a>(&self, pairs: impl IntoIterator<Item = &'a (usize, usize)>) -> LieOneForm {
        let mut df = LieOneForm::new(self.chart);
        for &(i, j) in pairs {
            df.set_raw(i, j, self.values[j] - self.values[i]);
        }
        df
    }

    /// Adds the same twist to every vertex; only used to check gauge invariance.
    pub fn shifted(&self, c: &Twist) -> VertexPotential {
        let c = c.to_vector();
        VertexPotential {
            values: self.values.iter().map(|v| v + c).collect(),
            ..self.clone()
        }
    }
}

/// Symmetric positive pair weights keyed by `(i, j)` with `i < j`.
pub type PairWeights = BTreeMap<(usize, usize), f64>;

/// Unit-metric cotangent weights: `1 / (2 sqrt 3)` per incident triangle.
pub fn cotangent_weights(s: &HalfedgeSurface) -> PairWeights {
    let w = unit_triangle_weight();
    let mut weights = PairWeights::new();
    for [a, b, c] in s.triangles() {
        for (x, y) in [(a, b), (b, c), (c, a)] {
            *weights.entry((x.min(y), x.max(y))).or_insert(0.0) += w;
        }
    }
    weights
}

/// `delta omega (v_i) = sum_j w_ij omega(v_i, v_j)` at every vertex.
pub fn coboundary(vertex_count: usize, weights: &PairWeights, omega: &LieOneForm) -> Result<Vec<Twist>> {
    coboundary_raw(vertex_count, weights, omega)
        .map(|vals| vals.iter().map(|v| Twist::from_vector(v, omega.chart())).collect())
}

fn coboundary_raw(vertex_count: usize, weights: &PairWeights, omega: &LieOneForm) -> Result<Vec<Vector6<f64>>> {
    let mut out = vec![Vector6::zeros(); vertex_count];
    for (&(i, j), &w) in weights {
        let v = omega
            .raw(i, j)
            .ok_or_else(|| Error::invalid(format!("1-form has no value on ({i}, {j})")))?;
        out[i] += w * v;
        out[j] -= w * v;
    }
    Ok(out)
}

/// Assembled Laplacian and right-hand sides.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    pub weights: PairWeights,
    /// Positive semidefinite `L = D - W`, so the discrete Laplacian is `-L`.
    pub laplacian: CsrMatrix,
    /// Coboundary of the form, one 6-vector per vertex.
    pub rhs: Vec<Vector6<f64>>,
    pub chart: Chart,
}

impl PoissonSystem {
    pub fn assemble(vertex_count: usize, weights: PairWeights, omega: &LieOneForm) -> Result<Self> {
        let mut triplets = Vec::with_capacity(4 * weights.len());
        for (&(i, j), &w) in &weights {
            if !(w > 0.0) {
                return Err(Error::invalid(format!("non-positive weight on ({i}, {j})")));
            }
            triplets.extend([(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)]);
        }
        let laplacian = CsrMatrix::from_triplets(vertex_count, vertex_count, &triplets);
        let rhs = coboundary_raw(vertex_count, &weights, omega)?;
        Ok(Self {
            weights,
            laplacian,
            rhs,
            chart: omega.chart(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.laplacian.nrows()
    }

    /// Laplacian triplets as `row col value`, then `# rhs` and one line of six values per vertex.
    pub fn write_coo<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# laplacian {} x {}", self.vertex_count(), self.vertex_count())?;
        self.laplacian.write_coo(&mut w)?;
        writeln!(w, "# rhs")?;
        for (v, r) in self.rhs.iter().enumerate() {
            write!(w, "{v}")?;
            for x in r.iter() {
                write!(w, " {x:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Solves with `f(root) = 0` by deleting the root row and column.
    pub fn solve(&self, root: usize, opts: &SolverOptions) -> Result<(Vec<Vector6<f64>>, f64)> {
        let n = self.vertex_count();
        let index: Vec<Option<usize>> = (0..n)
            .scan(0usize, |next, v| {
                Some(if v == root {
                    None
                } else {
                    *next += 1;
                    Some(*next - 1)
                })
            })
            .collect();
        let triplets: Vec<(usize, usize, f64)> = self
            .laplacian
            .triplets()
            .filter_map(|(r, c, v)| Some((index[r]?, index[c]?, v)))
            .collect();
        let reduced = CsrMatrix::from_triplets(n - 1, n - 1, &triplets);
        let cap = opts.max_iter_factor * n.max(1);

        let columns: Vec<_> = (0..6)
            .into_par_iter()
            .map(|k| {
                // L f = -delta(omega)
                let b: Vec<f64> = (0..n).filter(|&v| v != root).map(|v| -self.rhs[v][k]).collect();
                conjugate_gradient(&reduced, &b, opts.tolerance, cap)
            })
            .collect();

        let worst = columns.iter().map(|c| c.relative_residual).fold(0.0, f64::max);
        if worst > opts.divergence_threshold {
            return Err(Error::SolverDiverged {
                relative_residual: worst,
                iterations: columns.iter().map(|c| c.iterations).max().unwrap_or(0),
            });
        }
        let mut f = vec![Vector6::zeros(); n];
        for (v, slot) in index.iter().enumerate() {
            if let Some(r) = slot {
                for (k, col) in columns.iter().enumerate() {
                    f[v][k] = col.x[*r];
                }
            }
        }
        Ok((f, worst))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target relative residual for conjugate gradient.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the vertex count.
    pub max_iter_factor: usize,
    /// Relative residual above which the solve is reported as diverged.
    pub divergence_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter_factor: 10,
            divergence_threshold: 1e-8,
        }
    }
}

/// `omega = df + residual`, with `residual` free of exact components.
#[derive(Debug, Clone)]
pub struct HodgeSplit {
    pub potential: VertexPotential,
    pub exact: LieOneForm,
    pub residual: LieOneForm,
    pub relative_residual: f64,
}

/// Extends graph-edge values to every surface pair.
///
/// A pair that is not a graph edge gets the sum of `omega0` along the BFS
/// shortest path in `g` between its endpoints. Auxiliary surface vertices stand
/// in for their anchor vertex, so a pair `(x, aux)` gets the value of
/// `(x, anchor)` and `(anchor, aux)` gets zero.
pub fn extend_form(g: &ViewingGraph, s: &HalfedgeSurface, omega0: &LieOneForm) -> Result<LieOneForm> {
    for e in g.edges() {
        if !omega0.contains(e.i, e.j) {
            return Err(Error::invalid(format!("1-form missing graph edge ({}, {})", e.i, e.j)));
        }
    }
    let mut trees: HashMap<FrameId, BfsTree> = HashMap::new();
    let mut out = LieOneForm::new(omega0.chart());
    for (a, b) in s.vertex_pairs() {
        if b < s.frame_count() && g.contains_edge(a, b) {
            out.set_raw(a, b, omega0.raw(a, b).expect("checked above"));
            continue;
        }
        let (from, to) = (s.anchor(a), s.anchor(b));
        if from == to {
            out.set_raw(a, b, Vector6::zeros());
            continue;
        }
        let tree = trees.entry(from).or_insert_with(|| g.bfs_tree(from));
        let mut path = tree.path_to_root(to).ok_or(Error::NoPath { from, to })?;
        path.reverse();
        let sum = omega0.integrate(&path).ok_or(Error::NoPath { from, to })?;
        out.set_raw(a, b, sum.to_vector());
    }
    Ok(out)
}

/// Exact/residual split under the unit-metric cotangent weights.
pub fn solve_exact(s: &HalfedgeSurface, omega: &LieOneForm) -> Result<HodgeSplit> {
    solve_exact_with(s, &cotangent_weights(s), omega, &SolverOptions::default())
}

pub fn solve_exact_with(
    s: &HalfedgeSurface,
    weights: &PairWeights,
    omega: &LieOneForm,
    opts: &SolverOptions,
) -> Result<HodgeSplit> {
    let root = 0;
    let system = PoissonSystem::assemble(s.vertex_count(), weights.clone(), omega)?;
    let (values, relative_residual) = system.solve(root, opts)?;
    let potential = VertexPotential {
        chart: omega.chart(),
        values,
        gauge_root: root,
        frame_count: s.frame_count(),
    };
    let pairs: Vec<(usize, usize)> = omega.pairs().collect();
    let exact = potential.differential(&pairs);
    let residual = omega.combine(1.0, &exact, -1.0);
    Ok(HodgeSplit {
        potential,
        exact,
        residual,
        relative_residual,
    })
}

/// Largest `|form(a,b) + form(b,c) + form(c,a)|_inf` over all triangles.
pub fn exactness_check(s: &HalfedgeSurface, form: &LieOneForm) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for [a, b, c] in s.triangles() {
        let sum = form
            .integrate(&[a, b, c, a])
            .ok_or_else(|| Error::invalid(format!("1-form undefined on triangle ({a}, {b}, {c})")))?;
        worst = worst.max(sum.norm_inf());
    }
    Ok(worst)
}

/// `sum_pairs w_ij <a(i,j), b(i,j)>`.
pub fn weighted_inner(weights: &PairWeights, a: &LieOneForm, b: &LieOneForm) -> f64 {
    weights
        .iter()
        .map(|(&(i, j), &w)| {
            let x = a.raw(i, j).unwrap_or_else(Vector6::zeros);
            let y = b.raw(i, j).unwrap_or_else(Vector6::zeros);
            w * x.dot(&y)
        })
        .sum()
}
