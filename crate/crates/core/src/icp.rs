//! Pairwise point-to-plane registration and the point-to-plane edge score.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::cloud::{KdTree, Point, PointCloud};
use crate::error::{Error, Result};
use crate::se3::{pose_exp, Chart, Pose, Twist};

pub const DEFAULT_SCORE_SIGMA: f64 = 0.05;

/// Per-point normals from the smallest principal direction of the `k` nearest
/// neighbors (the point itself included), flipped to face the origin.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k >= 3"));
    }
    if cloud.len() < k {
        return Err(Error::invalid(format!(
            "cloud has {} points, fewer than k = {k}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.points);
    let normals = cloud
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let nbrs = tree.k_nearest(p, k);
            let mean: Point = nbrs.iter().map(|n| cloud.points[n.index]).sum::<Point>() / k as f64;
            let cov: Matrix3<f64> = nbrs
                .iter()
                .map(|n| {
                    let d = cloud.points[n.index] - mean;
                    d * d.transpose()
                })
                .sum();
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
            if top <= 0.0 || mid <= 1e-12 * top {
                return Err(Error::DegenerateNeighborhood { index });
            }
            let n: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
            Ok(orient_towards_origin(n, p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
    })
}

fn orient_towards_origin(n: Vector3<f64>, p: &Point) -> Vector3<f64> {
    let facing = -n.dot(p);
    let scale = p.norm().max(1.0);
    if facing.abs() > 1e-12 * scale {
        return if facing < 0.0 { -n } else { n };
    }
    // viewpoint lies in the tangent plane: make the first significant component positive
    match n.iter().find(|c| c.abs() > 1e-9) {
        Some(c) if *c < 0.0 => -n,
        _ => n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Stop once the twist increment norm falls below this.
    pub tolerance: f64,
    /// Correspondences farther than this are never used.
    pub max_correspondence_distance: f64,
    /// Correspondences beyond this multiple of the median distance are rejected.
    pub rejection_factor: f64,
    /// Pairs closer than this survive the median rule. Without it a cloud that
    /// is mostly aligned already rejects exactly the pairs carrying the error.
    pub rejection_floor: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-10,
            max_correspondence_distance: 0.5,
            rejection_factor: 3.0,
            rejection_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Motion mapping source points into the destination frame.
    pub pose: Pose,
    /// Final point-to-plane RMS over the accepted correspondences.
    pub rms: f64,
    /// RMS after each accepted step, starting with the initial guess.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

struct Pair {
    p: Point,
    q: Point,
    n: Vector3<f64>,
}

struct Target<'a> {
    cloud: &'a PointCloud,
    normals: &'a [Point],
    tree: KdTree,
}

impl<'a> Target<'a> {
    fn new(cloud: &'a PointCloud) -> Result<Self> {
        let normals = cloud
            .normals
            .as_deref()
            .ok_or_else(|| Error::invalid("destination cloud needs normals"))?;
        Ok(Self {
            cloud,
            normals,
            tree: KdTree::new(&cloud.points),
        })
    }

    fn all_pairs(&self, src: &PointCloud, pose: &Pose) -> Vec<(Pair, f64)> {
        src.points
            .iter()
            .filter_map(|p| {
                let p = pose.transform_point(p);
                let nb = self.tree.nearest(&p)?;
                let pair = Pair {
                    p,
                    q: self.cloud.points[nb.index],
                    n: self.normals[nb.index],
                };
                Some((pair, nb.dist_sq.sqrt()))
            })
            .collect()
    }

    fn pairs(&self, src: &PointCloud, pose: &Pose, params: &IcpParams) -> Vec<Pair> {
        let all = self.all_pairs(src, pose);
        let mut dists: Vec<f64> = all.iter().map(|(_, d)| *d).collect();
        if dists.is_empty() {
            return Vec::new();
        }
        let mid = dists.len() / 2;
        let median = *dists.select_nth_unstable_by(mid, f64::total_cmp).1;
        let limit = (params.rejection_factor * median)
            .max(params.rejection_floor)
            .min(params.max_correspondence_distance);
        all.into_iter().filter(|(_, d)| *d <= limit).map(|(p, _)| p).collect()
    }
}

fn plane_rms(pairs: &[Pair]) -> f64 {
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    let ss: f64 = pairs.iter().map(|c| c.n.dot(&(c.p - c.q)).powi(2)).sum();
    (ss / pairs.len() as f64).sqrt()
}

/// Minimum-norm solution of the linearized point-to-plane problem.
fn linearized_step(pairs: &[Pair]) -> Vector6<f64> {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in pairs {
        let a = c.p.cross(&c.n);
        let j = Vector6::new(a.x, a.y, a.z, c.n.x, c.n.y, c.n.z);
        let r = c.n.dot(&(c.p - c.q));
        h += j * j.transpose();
        g += j * r;
    }
    let svd = h.svd(true, true);
    let eps = 1e-9 * svd.singular_values.max();
    svd.solve(&(-g), eps).unwrap_or_else(|_| Vector6::zeros())
}

/// Point-to-plane ICP from `src` onto `dst` (which must carry normals).
///
/// Each step re-pairs points by nearest neighbor, drops pairs beyond
/// `rejection_factor` times the median distance, solves the linearized
/// problem for a twist increment and applies it on the left. A step that would
/// raise the RMS is halved up to eight times, then ICP stops at the current
/// estimate. Running out of iterations, or keeping fewer than six pairs, gives
/// [`Error::NoConvergence`] carrying the last estimate; in the second case its
/// `rms` is over raw nearest-neighbor distances.
pub fn icp_point_to_plane(src: &PointCloud, dst: &PointCloud, init: &Pose, params: &IcpParams) -> Result<IcpResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::invalid("ICP needs non-empty clouds"));
    }
    let target = Target::new(dst)?;
    let mut pose = *init;
    let mut pairs = target.pairs(src, &pose, params);
    let mut rms = plane_rms(&pairs);
    let mut history = vec![rms];

    for it in 0..params.max_iter {
        if pairs.len() < 6 {
            // too little overlap to say anything about planes: report point distances
            let all = target.all_pairs(src, &pose);
            let ss: f64 = all.iter().map(|(_, d)| d * d).sum();
            return Err(Error::NoConvergence {
                pose: Box::new(pose),
                rms: (ss / all.len() as f64).sqrt(),
            });
        }
        let xi = linearized_step(&pairs);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let inc = step * xi;
            let candidate = pose_exp(&Twist::from_vector(&inc, Chart::Se3Log)).compose(&pose);
            let cand_pairs = target.pairs(src, &candidate, params);
            let cand_rms = plane_rms(&cand_pairs);
            if cand_rms <= rms {
                accepted = Some((candidate, cand_pairs, cand_rms, inc.norm()));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_pairs, next_rms, inc_norm)) = accepted else {
            return Ok(IcpResult {
                pose,
                rms,
                rms_history: history,
                iterations: it,
            });
        };
        pose = next;
        pairs = next_pairs;
        rms = next_rms;
        history.push(rms);
        if inc_norm < params.tolerance {
            return Ok(IcpResult {
                pose,
                rms,
                rms_history: history,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NoConvergence {
        pose: Box::new(pose),
        rms,
    })
}

/// Pairs farther apart than this are treated as outside the overlap when scoring frames.
pub const DEFAULT_SCORE_OVERLAP: f64 = 0.1;

/// Pairs whose normals differ by more than this angle lie on different surfaces.
pub const NORMAL_COMPATIBILITY: f64 = std::f64::consts::FRAC_PI_4;

/// Scores how well `a`, moved by `m`, lies on the surface of `b`.
///
/// Reuse one scorer per destination cloud when scoring many edges.
pub struct PlaneScorer<'a> {
    target: Target<'a>,
    overlap: f64,
}

impl<'a> PlaneScorer<'a> {
    /// Scores over every nearest-neighbor pair.
    pub fn new(b: &'a PointCloud) -> Result<Self> {
        Self::with_overlap(b, f64::INFINITY)
    }

    /// Scores only over pairs closer than `overlap` whose normals (when `a` has
    /// them) agree within [`NORMAL_COMPATIBILITY`], so that parts of `a` that `b`
    /// never saw do not count. With no such pair every point is taken to be
    /// `overlap` away.
    pub fn with_overlap(b: &'a PointCloud, overlap: f64) -> Result<Self> {
        if !(overlap > 0.0) {
            return Err(Error::invalid("overlap distance must be positive"));
        }
        Ok(Self {
            target: Target::new(b)?,
            overlap,
        })
    }

    /// `exp(-mean |n(q) . (m p - q)| / sigma)` over nearest-neighbor pairs.
    pub fn score(&self, a: &PointCloud, m: &Pose, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("score sigma must be positive"));
        }
        if a.is_empty() {
            return Err(Error::invalid("cannot score an empty cloud"));
        }
        let restricted = self.overlap.is_finite();
        let min_cos = NORMAL_COMPATIBILITY.cos();
        let src_normals = a.normals.as_deref().filter(|_| restricted);
        let (sum, count) = self
            .target
            .all_pairs(a, m)
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| *d <= self.overlap)
            .filter(|(k, (c, _))| match src_normals {
                Some(ns) => m.transform_vector(&ns[*k]).dot(&c.n) >= min_cos,
                None => true,
            })
            .fold((0.0, 0usize), |(s, k), (_, (c, _))| {
                (s + c.n.dot(&(c.p - c.q)).abs(), k + 1)
            });
        let mean = if count == 0 { self.overlap } else { sum / count as f64 };
        Ok((-mean / sigma).exp())
    }
}

pub fn point_to_plane_score(a: &PointCloud, b: &PointCloud, m: &Pose, sigma: f64) -> Result<f64> {
    PlaneScorer::new(b)?.score(a, m, sigma)
}
