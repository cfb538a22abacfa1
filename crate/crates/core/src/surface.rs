//! Embedding of the viewing graph onto a closed oriented surface.
//!
//! A rotation system (a cyclic order of the edges around every vertex) fixes a
//! 2-cell embedding: at each vertex `v` with incident edges `e_0 .. e_{n-1}`,
//! the halfedge arriving along `e_k` continues with the halfedge leaving along
//! `e_{k+1 mod n}`. The orbits of that `next` permutation are the faces, and
//! Euler's formula gives the genus. Faces are then triangulated so the surface
//! can carry a Laplacian.
//!
//! Surface edge `e` owns halfedges `2e` and `2e + 1`. Graph edge `k` is surface
//! edge `k`, so the graph-to-surface edge map is the identity on ids.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::Point;
use crate::error::{Error, Result};
use crate::graph::{BfsTree, Loop, ViewingGraph};

/// How the cyclic edge order around each vertex is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingOrder {
    /// Neighbors in ascending id order.
    #[default]
    Ascending,
    /// Each vertex's neighbor list shuffled by a ChaCha8 stream with this seed.
    SeededRandom(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Halfedge {
    pub source: usize,
    pub target: usize,
    pub twin: usize,
    pub next: usize,
    pub face: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrigin {
    /// Carries graph edge with this id.
    Graph(usize),
    /// Fan diagonal between two original vertices.
    Diagonal,
    /// Cone edge to an auxiliary vertex.
    Spoke,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfedgeSurface {
    frame_count: usize,
    /// Auxiliary vertex `frame_count + k` stands in for graph vertex `aux_anchor[k]`.
    aux_anchor: Vec<usize>,
    halfedges: Vec<Halfedge>,
    origins: Vec<EdgeOrigin>,
    /// One halfedge per face.
    faces: Vec<usize>,
    genus: usize,
    triangulated: bool,
}

impl HalfedgeSurface {
    pub fn vertex_count(&self) -> usize {
        self.frame_count + self.aux_anchor.len()
    }

    /// Number of original graph vertices. Auxiliary vertices come after these.
    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn is_auxiliary(&self, v: usize) -> bool {
        v >= self.frame_count
    }

    /// The graph vertex a surface vertex stands for.
    pub fn anchor(&self, v: usize) -> usize {
        if v < self.frame_count {
            v
        } else {
            self.aux_anchor[v - self.frame_count]
        }
    }

    pub fn edge_count(&self) -> usize {
        self.origins.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn genus(&self) -> usize {
        self.genus
    }

    pub fn is_triangulated(&self) -> bool {
        self.triangulated
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    pub fn halfedges(&self) -> &[Halfedge] {
        &self.halfedges
    }

    pub fn origin(&self, edge: usize) -> EdgeOrigin {
        self.origins[edge]
    }

    /// Endpoints `(source, target)` of the edge's first halfedge.
    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        let h = &self.halfedges[2 * edge];
        (h.source, h.target)
    }

    /// Halfedges of face `f` in traversal order.
    pub fn face_halfedges(&self, f: usize) -> Vec<usize> {
        let start = self.faces[f];
        let mut out = vec![start];
        let mut h = self.halfedges[start].next;
        while h != start {
            out.push(h);
            h = self.halfedges[h].next;
        }
        out
    }

    /// Corner vertices of face `f` in traversal order.
    pub fn face_vertices(&self, f: usize) -> Vec<usize> {
        self.face_halfedges(f)
            .into_iter()
            .map(|h| self.halfedges[h].source)
            .collect()
    }

    /// Triangles as corner triples; only meaningful once triangulated.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        (0..self.face_count())
            .filter_map(|f| {
                let v = self.face_vertices(f);
                (v.len() == 3).then(|| [v[0], v[1], v[2]])
            })
            .collect()
    }

    /// Distinct unordered vertex pairs joined by at least one surface edge.
    pub fn vertex_pairs(&self) -> BTreeSet<(usize, usize)> {
        (0..self.edge_count())
            .map(|e| {
                let (a, b) = self.edge_endpoints(e);
                (a.min(b), a.max(b))
            })
            .collect()
    }

    /// Checks twin and next permutations, face assignment, and Euler's formula.
    pub fn validate(&self) -> Result<()> {
        let n = self.halfedges.len();
        if n != 2 * self.origins.len() {
            return Err(Error::invalid("halfedge count is not twice the edge count"));
        }
        let mut has_pred = vec![false; n];
        for (id, h) in self.halfedges.iter().enumerate() {
            let t = &self.halfedges[h.twin];
            if t.twin != id || t.source != h.target || t.target != h.source {
                return Err(Error::invalid(format!("halfedge {id}: twin mismatch")));
            }
            if self.halfedges[h.next].source != h.target {
                return Err(Error::invalid(format!("halfedge {id}: next does not continue")));
            }
            if std::mem::replace(&mut has_pred[h.next], true) {
                return Err(Error::invalid("next is not a permutation"));
            }
        }
        let mut seen = vec![false; n];
        for f in 0..self.face_count() {
            for h in self.face_halfedges(f) {
                if self.halfedges[h].face != f || std::mem::replace(&mut seen[h], true) {
                    return Err(Error::invalid(format!("face {f} is inconsistent")));
                }
                if self.triangulated && self.face_halfedges(f).len() != 3 {
                    return Err(Error::invalid(format!("face {f} is not a triangle")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("halfedge not covered by any face"));
        }
        if self.euler_characteristic() != 2 - 2 * self.genus as i64 {
            return Err(Error::invalid("Euler characteristic does not match genus"));
        }
        Ok(())
    }

    /// Vertex adjacency as `(neighbor, edge)` lists sorted ascending.
    fn incidence(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.vertex_count()];
        for e in 0..self.edge_count() {
            let (a, b) = self.edge_endpoints(e);
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

fn genus_from_euler(v: usize, e: usize, f: usize) -> Result<usize> {
    let chi = v as i64 - e as i64 + f as i64;
    if chi > 2 || (2 - chi) % 2 != 0 {
        return Err(Error::invalid(format!("Euler characteristic {chi} is not 2 - 2g")));
    }
    Ok(((2 - chi) / 2) as usize)
}

/// Traces the faces of the rotation-system embedding of `g`.
pub fn embed(g: &ViewingGraph, order: EmbeddingOrder) -> Result<HalfedgeSurface> {
    if g.node_count() < 3 {
        return Err(Error::invalid("embedding needs at least 3 vertices"));
    }
    g.ensure_connected()?;

    let m = g.edge_count();
    let mut halfedges: Vec<Halfedge> = g
        .edges()
        .iter()
        .enumerate()
        .flat_map(|(k, e)| {
            let fwd = Halfedge {
                source: e.i,
                target: e.j,
                twin: 2 * k + 1,
                next: usize::MAX,
                face: usize::MAX,
            };
            let bwd = Halfedge {
                source: e.j,
                target: e.i,
                twin: 2 * k,
                ..fwd
            };
            [fwd, bwd]
        })
        .collect();

    let mut rng = match order {
        EmbeddingOrder::Ascending => None,
        EmbeddingOrder::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    for v in 0..g.node_count() {
        let mut rotation: Vec<usize> = g
            .neighbors(v)
            .iter()
            .map(|&w| g.edge_id(v, w).expect("adjacency matches edges"))
            .collect();
        if let Some(rng) = rng.as_mut() {
            rotation.shuffle(rng);
        }
        let n = rotation.len();
        for k in 0..n {
            let incoming = halfedge_towards(&halfedges, rotation[k], v);
            let outgoing = halfedge_towards(&halfedges, rotation[(k + 1) % n], v) ^ 1;
            halfedges[incoming].next = outgoing;
        }
    }

    let faces = trace_faces(&mut halfedges);
    let genus = genus_from_euler(g.node_count(), m, faces.len())?;
    let surface = HalfedgeSurface {
        frame_count: g.node_count(),
        aux_anchor: Vec::new(),
        halfedges,
        origins: (0..m).map(EdgeOrigin::Graph).collect(),
        faces,
        genus,
        triangulated: false,
    };
    debug_assert!(surface.validate().is_ok());
    Ok(surface)
}

fn halfedge_towards(halfedges: &[Halfedge], edge: usize, v: usize) -> usize {
    if halfedges[2 * edge].target == v {
        2 * edge
    } else {
        2 * edge + 1
    }
}

fn trace_faces(halfedges: &mut [Halfedge]) -> Vec<usize> {
    let mut faces = Vec::new();
    for start in 0..halfedges.len() {
        if halfedges[start].face != usize::MAX {
            continue;
        }
        let f = faces.len();
        faces.push(start);
        let mut h = start;
        loop {
            halfedges[h].face = f;
            h = halfedges[h].next;
            if h == start {
                break;
            }
        }
    }
    faces
}

struct TriangulationBuilder {
    halfedges: Vec<Halfedge>,
    origins: Vec<EdgeOrigin>,
    faces: Vec<usize>,
}

impl TriangulationBuilder {
    fn new_edge(&mut self, a: usize, b: usize, origin: EdgeOrigin) -> (usize, usize) {
        let h = self.halfedges.len();
        let proto = Halfedge {
            source: a,
            target: b,
            twin: h + 1,
            next: usize::MAX,
            face: usize::MAX,
        };
        self.halfedges.push(proto);
        self.halfedges.push(Halfedge {
            source: b,
            target: a,
            twin: h,
            ..proto
        });
        self.origins.push(origin);
        (h, h + 1)
    }

    fn add_face(&mut self, loop_: &[usize]) {
        let f = self.faces.len();
        self.faces.push(loop_[0]);
        for (k, &h) in loop_.iter().enumerate() {
            self.halfedges[h].next = loop_[(k + 1) % loop_.len()];
            self.halfedges[h].face = f;
        }
    }
}

/// Splits every face into triangles.
///
/// Faces are fanned from the lowest-id corner whose vertex occurs only once on
/// the face, so no diagonal is a self-loop. A face where every vertex repeats
/// (or with fewer than 3 corners) is coned from a new auxiliary vertex that
/// stands in for the face's lowest-id vertex.
pub fn triangulate(s: &HalfedgeSurface) -> Result<HalfedgeSurface> {
    let mut b = TriangulationBuilder {
        halfedges: s.halfedges.clone(),
        origins: s.origins.clone(),
        faces: Vec::new(),
    };
    let mut aux_anchor = s.aux_anchor.clone();

    for f in 0..s.face_count() {
        let hs = s.face_halfedges(f);
        let corners: Vec<usize> = hs.iter().map(|&h| s.halfedges[h].source).collect();
        let len = hs.len();
        if len == 3 {
            b.add_face(&hs);
            continue;
        }
        let apex = (0..len)
            .filter(|&k| corners.iter().filter(|&&c| c == corners[k]).count() == 1)
            .min_by_key(|&k| corners[k]);
        match apex {
            Some(a) if len > 3 => {
                let hs: Vec<usize> = (0..len).map(|k| hs[(a + k) % len]).collect();
                let c: Vec<usize> = (0..len).map(|k| corners[(a + k) % len]).collect();
                // diagonal[m] joins c[0] and c[m] for m in 2..=len-2
                let diag: Vec<(usize, usize)> = (2..=len - 2)
                    .map(|m| b.new_edge(c[0], c[m], EdgeOrigin::Diagonal))
                    .collect();
                let d = |m: usize| diag[m - 2];
                b.add_face(&[hs[0], hs[1], d(2).1]);
                for m in 2..len - 2 {
                    b.add_face(&[d(m).0, hs[m], d(m + 1).1]);
                }
                b.add_face(&[d(len - 2).0, hs[len - 2], hs[len - 1]]);
            }
            _ => {
                let aux = s.frame_count + aux_anchor.len();
                let anchor = corners
                    .iter()
                    .map(|&c| {
                        if c < s.frame_count {
                            c
                        } else {
                            aux_anchor[c - s.frame_count]
                        }
                    })
                    .min()
                    .expect("face has corners");
                aux_anchor.push(anchor);
                let spokes: Vec<(usize, usize)> =
                    corners.iter().map(|&c| b.new_edge(aux, c, EdgeOrigin::Spoke)).collect();
                for k in 0..len {
                    b.add_face(&[spokes[k].0, hs[k], spokes[(k + 1) % len].1]);
                }
            }
        }
    }

    let vertex_count = s.frame_count + aux_anchor.len();
    let genus = genus_from_euler(vertex_count, b.origins.len(), b.faces.len())?;
    if genus != s.genus {
        return Err(Error::invalid(format!(
            "triangulation changed the genus from {} to {genus}",
            s.genus
        )));
    }
    let out = HalfedgeSurface {
        frame_count: s.frame_count,
        aux_anchor,
        halfedges: b.halfedges,
        origins: b.origins,
        faces: b.faces,
        genus,
        triangulated: true,
    };
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

/// Generators of the first homology group by tree-cotree decomposition.
///
/// A BFS tree on the vertices and a BFS cotree on the faces (crossing only
/// non-tree edges) leave exactly `2g` edges; each closes one loop through the
/// tree.
pub fn homology_basis(s: &HalfedgeSurface) -> Vec<Loop> {
    let incidence = s.incidence();
    let n = s.vertex_count();

    let mut tree_edge = vec![false; s.edge_count()];
    let mut parent = vec![None; n];
    let mut depth = vec![0; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, e) in &incidence[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                depth[w] = depth[v] + 1;
                tree_edge[e] = true;
                queue.push_back(w);
            }
        }
    }
    let tree = BfsTree {
        root: 0,
        parent,
        depth,
        order,
    };

    let face_count = s.face_count();
    let mut dual = vec![Vec::new(); face_count];
    for e in (0..s.edge_count()).filter(|&e| !tree_edge[e]) {
        let fa = s.halfedges[2 * e].face;
        let fb = s.halfedges[2 * e + 1].face;
        dual[fa].push((fb, e));
        dual[fb].push((fa, e));
    }
    let mut cotree_edge = vec![false; s.edge_count()];
    let mut face_seen = vec![false; face_count];
    let mut queue = VecDeque::new();
    if face_count > 0 {
        face_seen[0] = true;
        queue.push_back(0);
    }
    while let Some(f) = queue.pop_front() {
        for &(g, e) in &dual[f] {
            if !face_seen[g] {
                face_seen[g] = true;
                cotree_edge[e] = true;
                queue.push_back(g);
            }
        }
    }

    (0..s.edge_count())
        .filter(|&e| !tree_edge[e] && !cotree_edge[e])
        .map(|e| {
            let (u, v) = s.edge_endpoints(e);
            let mut vertices = vec![u];
            vertices.extend(tree.tree_path(v, u));
            Loop::new(vertices)
        })
        .collect()
}

/// Vertex positions from the low Laplacian eigenvectors, for inspection only.
pub fn spectral_layout(s: &HalfedgeSurface) -> Vec<Point> {
    let n = s.vertex_count();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for (a, b) in s.vertex_pairs() {
        lap[(a, b)] -= 1.0;
        lap[(b, a)] -= 1.0;
        lap[(a, a)] += 1.0;
        lap[(b, b)] += 1.0;
    }
    let eig = SymmetricEigen::new(lap);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let coord = |v: usize, k: usize| idx.get(k).map_or(0.0, |&c| eig.eigenvectors[(v, c)]);
    (0..n)
        .map(|v| Point::new(coord(v, 1), coord(v, 2), coord(v, 3)))
        .collect()
}
