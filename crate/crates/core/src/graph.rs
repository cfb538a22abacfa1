//! The viewing graph: frames as nodes, measured relative motions as edges.
//!
//! Edges are stored with canonical orientation `i < j`. The measurement on
//! `(i, j)` maps points of frame `j` into frame `i`; asking for `(j, i)` returns
//! its inverse.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::se3::Pose;

pub type FrameId = usize;

pub const DEFAULT_CENTROID_THRESHOLD: f64 = 0.2;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_VOXEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub i: FrameId,
    pub j: FrameId,
    pub measurement: Pose,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewingGraph {
    node_count: usize,
    edges: Vec<GraphEdge>,
    adjacency: Vec<Vec<FrameId>>,
    index: HashMap<(FrameId, FrameId), usize>,
}

impl ViewingGraph {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            edges: Vec::new(),
            adjacency: vec![Vec::new(); node_count],
            index: HashMap::new(),
        }
    }

    /// Adds an edge carrying `measurement` as the motion frame `j` -> frame `i`.
    /// Edges given as `i > j` are flipped and their measurement inverted.
    pub fn add_edge(&mut self, i: FrameId, j: FrameId, measurement: Pose) -> Result<usize> {
        self.add_weighted_edge(i, j, measurement, 1.0)
    }

    pub fn add_weighted_edge(&mut self, i: FrameId, j: FrameId, measurement: Pose, weight: f64) -> Result<usize> {
        if i == j {
            return Err(Error::invalid(format!("self-loop at frame {i}")));
        }
        if i >= self.node_count || j >= self.node_count {
            return Err(Error::invalid(format!(
                "edge ({i}, {j}) references a frame outside 0..{}",
                self.node_count
            )));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("edge ({i}, {j}) has non-positive weight")));
        }
        let (a, b, m) = if i < j {
            (i, j, measurement)
        } else {
            (j, i, measurement.inverse())
        };
        if self.index.contains_key(&(a, b)) {
            return Err(Error::invalid(format!("duplicate edge ({a}, {b})")));
        }
        let id = self.edges.len();
        self.edges.push(GraphEdge {
            i: a,
            j: b,
            measurement: m,
            weight,
        });
        self.index.insert((a, b), id);
        insert_sorted(&mut self.adjacency[a], b);
        insert_sorted(&mut self.adjacency[b], a);
        Ok(id)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Neighbors of `v` in ascending order.
    pub fn neighbors(&self, v: FrameId) -> &[FrameId] {
        &self.adjacency[v]
    }

    pub fn edge_id(&self, i: FrameId, j: FrameId) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn contains_edge(&self, i: FrameId, j: FrameId) -> bool {
        self.edge_id(i, j).is_some()
    }

    /// Motion mapping frame `j` into frame `i`, for either orientation.
    pub fn measurement(&self, i: FrameId, j: FrameId) -> Option<Pose> {
        let e = &self.edges[self.edge_id(i, j)?];
        Some(if i < j { e.measurement } else { e.measurement.inverse() })
    }

    pub fn set_measurement(&mut self, i: FrameId, j: FrameId, m: Pose) -> Result<()> {
        let id = self
            .edge_id(i, j)
            .ok_or_else(|| Error::invalid(format!("no edge ({i}, {j})")))?;
        self.edges[id].measurement = if i < j { m } else { m.inverse() };
        Ok(())
    }

    /// Same topology, measurements replaced edge by edge.
    pub fn map_measurements(&self, mut f: impl FnMut(&GraphEdge) -> Pose) -> ViewingGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.measurement = f(e);
        }
        g
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.node_count];
        let mut count = 0;
        for s in 0..self.node_count {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &w in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.node_count > 0 && self.component_count() == 1
    }

    pub fn ensure_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::DisconnectedGraph {
                components: self.component_count(),
            })
        }
    }

    /// Breadth-first tree visiting neighbors in ascending order.
    pub fn bfs_tree(&self, root: FrameId) -> BfsTree {
        bfs(self.node_count, root, |v| self.adjacency[v].iter().copied())
    }

    /// Fewest-edge path `from -> to` (inclusive), or `None` if unreachable.
    pub fn shortest_path(&self, from: FrameId, to: FrameId) -> Option<Vec<FrameId>> {
        self.bfs_tree(from).path_to_root(to).map(|mut p| {
            p.reverse();
            p
        })
    }
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    let pos = v.binary_search(&x).unwrap_or_else(|p| p);
    v.insert(pos, x);
}

#[derive(Debug, Clone)]
pub struct BfsTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    /// Vertices in visiting order.
    pub order: Vec<usize>,
}

impl BfsTree {
    pub fn reached(&self, v: usize) -> bool {
        v == self.root || self.parent[v].is_some()
    }

    /// `[v, parent(v), ..., root]`.
    pub fn path_to_root(&self, v: usize) -> Option<Vec<usize>> {
        if !self.reached(v) {
            return None;
        }
        let mut path = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        Some(path)
    }

    /// Tree path from `a` to `b` (inclusive) through their lowest common ancestor.
    pub fn tree_path(&self, a: usize, b: usize) -> Vec<usize> {
        let (mut x, mut y) = (a, b);
        let mut left = vec![x];
        let mut right = vec![y];
        while self.depth[x] > self.depth[y] {
            x = self.parent[x].expect("non-root has parent");
            left.push(x);
        }
        while self.depth[y] > self.depth[x] {
            y = self.parent[y].expect("non-root has parent");
            right.push(y);
        }
        while x != y {
            x = self.parent[x].expect("non-root has parent");
            y = self.parent[y].expect("non-root has parent");
            left.push(x);
            right.push(y);
        }
        right.pop();
        left.extend(right.into_iter().rev());
        left
    }
}

pub(crate) fn bfs<I>(n: usize, root: usize, mut neighbors: impl FnMut(usize) -> I) -> BfsTree
where
    I: Iterator<Item = usize>,
{
    let mut parent = vec![None; n];
    let mut depth = vec![0; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    seen[root] = true;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for w in neighbors(v) {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                depth[w] = depth[v] + 1;
                queue.push_back(w);
            }
        }
    }
    BfsTree {
        root,
        parent,
        depth,
        order,
    }
}

/// Closed walk given as vertices; the first vertex is repeated at the end.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Loop {
    pub vertices: Vec<usize>,
}

impl Loop {
    pub fn new(vertices: Vec<usize>) -> Self {
        Self { vertices }
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.len() >= 2 && self.vertices.first() == self.vertices.last()
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    /// Consecutive oriented vertex pairs.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }
}

/// One cycle per non-tree edge of the BFS tree rooted at frame 0.
///
/// Each loop starts at the non-tree edge's lower endpoint `i`, crosses to `j`,
/// and returns to `i` along the tree.
pub fn fundamental_cycles(g: &ViewingGraph) -> Vec<Loop> {
    if g.node_count() == 0 {
        return Vec::new();
    }
    let tree = g.bfs_tree(0);
    let is_tree_edge = |a: usize, b: usize| tree.parent[a] == Some(b) || tree.parent[b] == Some(a);
    g.edges()
        .iter()
        .filter(|e| tree.reached(e.i) && !is_tree_edge(e.i, e.j))
        .map(|e| {
            let mut vertices = vec![e.i];
            vertices.extend(tree.tree_path(e.j, e.i));
            Loop::new(vertices)
        })
        .collect()
}

/// All `k`-vertex complete subgraphs, lexicographically sorted.
pub fn k_cliques(g: &ViewingGraph, k: usize) -> Result<Vec<Vec<FrameId>>> {
    if k < 3 {
        return Err(Error::invalid("k-cliques need k >= 3"));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    for v in 0..g.node_count() {
        current.push(v);
        let candidates: Vec<usize> = g.neighbors(v).iter().copied().filter(|&w| w > v).collect();
        extend_clique(g, k, &mut current, &candidates, &mut out);
        current.pop();
    }
    Ok(out)
}

fn extend_clique(
    g: &ViewingGraph,
    k: usize,
    current: &mut Vec<usize>,
    candidates: &[usize],
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for (idx, &w) in candidates.iter().enumerate() {
        current.push(w);
        let next: Vec<usize> = candidates[idx + 1..]
            .iter()
            .copied()
            .filter(|&x| g.contains_edge(w, x))
            .collect();
        extend_clique(g, k, current, &next, out);
        current.pop();
    }
}

/// Unordered pairs whose cloud centroids are closer than `threshold`.
pub fn centroid_pairs(clouds: &[PointCloud], threshold: f64) -> Result<Vec<(usize, usize)>> {
    let centroids = clouds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.centroid()
                .ok_or_else(|| Error::invalid(format!("cloud {i} is empty")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            if (centroids[i] - centroids[j]).norm() < threshold {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

fn voxel_set(cloud: &PointCloud, voxel: f64) -> HashSet<[i64; 3]> {
    cloud
        .points
        .iter()
        .map(|p| {
            [
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ]
        })
        .collect()
}

/// Intersection over union of the occupied voxel sets.
pub fn voxel_iou(a: &PointCloud, b: &PointCloud, voxel: f64) -> f64 {
    iou_of_sets(&voxel_set(a, voxel), &voxel_set(b, voxel))
}

fn iou_of_sets(a: &HashSet<[i64; 3]>, b: &HashSet<[i64; 3]>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Unordered pairs whose voxel IOU exceeds `threshold`.
pub fn iou_pairs(clouds: &[PointCloud], threshold: f64, voxel: f64) -> Result<Vec<(usize, usize)>> {
    if !(voxel > 0.0) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    if let Some(i) = clouds.iter().position(|c| c.is_empty()) {
        return Err(Error::invalid(format!("cloud {i} is empty")));
    }
    let sets: Vec<_> = clouds.iter().map(|c| voxel_set(c, voxel)).collect();
    let mut pairs = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if iou_of_sets(&sets[i], &sets[j]) > threshold {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

fn graph_from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<ViewingGraph> {
    let mut g = ViewingGraph::new(n);
    for &(i, j) in pairs {
        g.add_edge(i, j, Pose::identity())?;
    }
    g.ensure_connected()?;
    Ok(g)
}

/// Edges between clouds (in a common frame) whose centroids are within `threshold`.
/// Measurements are identity placeholders until registration fills them in.
pub fn build_by_centroid(clouds: &[PointCloud], threshold: f64) -> Result<ViewingGraph> {
    if clouds.len() < 2 {
        return Err(Error::invalid("need at least two clouds"));
    }
    graph_from_pairs(clouds.len(), &centroid_pairs(clouds, threshold)?)
}

pub fn build_by_iou(clouds: &[PointCloud], threshold: f64, voxel: f64) -> Result<ViewingGraph> {
    if clouds.len() < 2 {
        return Err(Error::invalid("need at least two clouds"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("IOU threshold must lie in (0, 1)"));
    }
    graph_from_pairs(clouds.len(), &iou_pairs(clouds, threshold, voxel)?)
}
