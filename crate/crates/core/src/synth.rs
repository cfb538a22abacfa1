//! Seeded synthetic room scans with ground truth.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::graph::ViewingGraph;
use crate::pipeline::Trajectory;
use crate::se3::{exp_rot, pose_exp, Chart, Pose, Twist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub n_frames: usize,
    /// Edge of the square floor; walls are as high as the room is wide.
    pub room_size: f64,
    pub points_per_frame: usize,
    pub capture_radius: f64,
    /// Radius of the camera circle as a fraction of `room_size`.
    pub path_radius: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_frames: 12,
            room_size: 1.0,
            points_per_frame: 1000,
            capture_radius: 0.7,
            path_radius: 0.15,
            seed: 0,
        }
    }
}

/// Right-composed Gaussian twist noise, per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub params: SceneParams,
    /// Room surface samples with inward normals.
    pub world: PointCloud,
    pub truth: Trajectory,
    /// World points within the capture radius of each camera, in camera coordinates.
    pub frames: Vec<PointCloud>,
    pub noise: NoiseSpec,
}

const WALLS: usize = 5;

/// Room corner. Walls on round coordinates would sit exactly on voxel
/// boundaries, where rounding scatters coplanar points over two voxel layers.
const ROOM_CORNER: Vector3<f64> = Vector3::new(0.0123, 0.0311, 0.0171);

/// Point and inward normal on wall `k` (floor, then x=0, x=s, y=0, y=s, relative to the corner) at unit coordinates `(u, v)`.
fn wall_point(k: usize, s: f64, u: f64, v: f64) -> (Point, Vector3<f64>) {
    let (a, b) = (u * s, v * s);
    let (p, n) = match k {
        0 => (Point::new(a, b, 0.0), Vector3::z()),
        1 => (Point::new(0.0, a, b), Vector3::x()),
        2 => (Point::new(s, a, b), -Vector3::x()),
        3 => (Point::new(a, 0.0, b), Vector3::y()),
        _ => (Point::new(a, s, b), -Vector3::y()),
    };
    (p + ROOM_CORNER, n)
}

fn sample_room(rng: &mut ChaCha8Rng, s: f64, n: usize) -> (Vec<Point>, Vec<Vector3<f64>>) {
    // all five faces have the same area
    let mut pts = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..WALLS);
        let (p, nrm) = wall_point(k, s, rng.random(), rng.random());
        pts.push(p);
        normals.push(nrm);
    }
    (pts, normals)
}

/// Camera poses on a horizontal circle around the room center, with a gentle
/// periodic tilt so consecutive motions rotate about all three axes.
fn circle_poses(n: usize, s: f64, path_radius: f64) -> Vec<Pose> {
    let center = ROOM_CORNER + Vector3::new(0.5 * s, 0.5 * s, 0.4 * s);
    let radius = path_radius * s;
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            let position = center + radius * Vector3::new(theta.cos(), theta.sin(), 0.0);
            let tilt = Vector3::new(0.2 * theta.cos(), 0.15 * theta.sin(), 0.4 * theta.sin());
            Pose::new(exp_rot(&tilt), position)
        })
        .collect()
}

fn crop(world: &PointCloud, camera: &Pose, radius: f64) -> PointCloud {
    let normals = world.normals.as_ref().expect("world cloud has normals");
    let inv = camera.inverse();
    let (mut pts, mut nrm) = (Vec::new(), Vec::new());
    for (p, n) in world.points.iter().zip(normals) {
        if (p - camera.translation).norm() <= radius {
            pts.push(inv.transform_point(p));
            nrm.push(inv.transform_vector(n));
        }
    }
    PointCloud {
        points: pts,
        normals: Some(nrm),
    }
}

/// Room scan along a closed circular path; frame `n-1` sits next to frame 0.
///
/// The world sample count is chosen so that a frame holds about
/// `points_per_frame` points on average.
pub fn generate_loop_scene(params: &SceneParams) -> Result<SyntheticScene> {
    if params.n_frames < 3 {
        return Err(Error::invalid("a loop scene needs at least 3 frames"));
    }
    if !(params.room_size > 0.0 && params.capture_radius > 0.0 && params.path_radius >= 0.0)
        || params.points_per_frame == 0
    {
        return Err(Error::invalid(
            "room size, capture radius and points per frame must be positive",
        ));
    }
    let s = params.room_size;
    let poses = circle_poses(params.n_frames, s, params.path_radius);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let (probe, _) = sample_room(&mut rng, s, 4000);
    let inside: usize = poses
        .iter()
        .map(|c| {
            probe
                .iter()
                .filter(|p| (*p - c.translation).norm() <= params.capture_radius)
                .count()
        })
        .sum();
    let fraction = inside as f64 / (probe.len() * poses.len()) as f64;
    if fraction == 0.0 {
        return Err(Error::invalid("capture radius reaches no wall"));
    }
    let n_world = (params.points_per_frame as f64 / fraction).ceil() as usize;
    let (pts, normals) = sample_room(&mut rng, s, n_world);
    let world = PointCloud::with_normals(pts, normals)?;
    let frames = poses.iter().map(|c| crop(&world, c, params.capture_radius)).collect();
    Ok(SyntheticScene {
        params: *params,
        world,
        truth: Trajectory { poses, iteration: 0 },
        frames,
        noise: NoiseSpec::none(),
    })
}

/// `M_ij <- M_ij exp(xi)` with `xi` drawn per axis from `N(0, sigma)`, edges in id order.
pub fn perturb_measurements(g: &ViewingGraph, noise: &NoiseSpec) -> Result<ViewingGraph> {
    let rot = Normal::new(0.0, noise.sigma_rot).map_err(|e| Error::invalid(e.to_string()))?;
    let trans = Normal::new(0.0, noise.sigma_trans).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    Ok(g.map_measurements(|e| {
        let mut v = Vector6::zeros();
        for k in 0..3 {
            v[k] = rot.sample(&mut rng);
        }
        for k in 3..6 {
            v[k] = trans.sample(&mut rng);
        }
        e.measurement.compose(&pose_exp(&Twist::from_vector(&v, Chart::Se3Log)))
    }))
}

impl SyntheticScene {
    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    /// True relative motion `T_i^-1 T_j` on every edge of `g`.
    pub fn exact_measurements(&self, g: &ViewingGraph) -> ViewingGraph {
        g.map_measurements(|e| self.truth.relative(e.i, e.j))
    }

    /// Exact measurements on `g`, perturbed by the scene's noise.
    pub fn noisy_measurements(&self, g: &ViewingGraph) -> Result<ViewingGraph> {
        perturb_measurements(&self.exact_measurements(g), &self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_by_centroid;
    use crate::graph::tests::complete_graph;

    fn world_frames(scene: &SyntheticScene) -> Vec<PointCloud> {
        scene
            .frames
            .iter()
            .zip(&scene.truth.poses)
            .map(|(c, t)| c.transformed(t))
            .collect()
    }

    #[test]
    fn eight_frames_close_a_loop() {
        let scene = generate_loop_scene(&SceneParams {
            n_frames: 8,
            ..Default::default()
        })
        .unwrap();
        let g = build_by_centroid(&world_frames(&scene), 0.2).unwrap();
        for k in 0..8 {
            assert!(g.contains_edge(k, (k + 1) % 8), "missing ({k}, {})", (k + 1) % 8);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams {
            n_frames: 5,
            points_per_frame: 300,
            seed: 17,
            ..Default::default()
        };
        assert_eq!(generate_loop_scene(&p).unwrap(), generate_loop_scene(&p).unwrap());
        let other = generate_loop_scene(&SceneParams { seed: 18, ..p }).unwrap();
        assert_ne!(generate_loop_scene(&p).unwrap().world, other.world);
    }

    #[test]
    fn frames_are_local_crops() {
        let scene = generate_loop_scene(&SceneParams {
            n_frames: 6,
            points_per_frame: 400,
            ..Default::default()
        })
        .unwrap();
        for (c, t) in scene.frames.iter().zip(&scene.truth.poses) {
            assert!(!c.is_empty());
            c.validate().unwrap();
            for p in &c.points {
                assert!(p.norm() <= scene.params.capture_radius + 1e-12);
            }
            let back = c.transformed(t);
            let wn = scene.world.normals.as_ref().unwrap();
            // every point of the crop is a world point, normal included
            for (p, n) in back.points.iter().zip(back.normals.as_ref().unwrap()) {
                let k = scene.world.points.iter().position(|w| (w - p).norm() < 1e-12).unwrap();
                assert!((wn[k] - n).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_capture_radius_sees_everything() {
        let scene = generate_loop_scene(&SceneParams {
            n_frames: 4,
            points_per_frame: 200,
            capture_radius: 2.0,
            ..Default::default()
        })
        .unwrap();
        for f in world_frames(&scene) {
            assert_eq!(f.len(), scene.world.len());
            for (a, b) in f.points.iter().zip(&scene.world.points) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_free_measurements_match_truth_exactly() {
        let scene = generate_loop_scene(&SceneParams {
            n_frames: 5,
            points_per_frame: 100,
            ..Default::default()
        })
        .unwrap();
        let g = scene.exact_measurements(&complete_graph(5));
        for e in g.edges() {
            let t = &scene.truth.poses;
            assert_eq!(e.measurement, t[e.i].inverse().compose(&t[e.j]));
        }
        assert_eq!(scene.noisy_measurements(&g).unwrap(), g);
    }

    #[test]
    fn rotation_noise_magnitude() {
        let mut g = ViewingGraph::new(1001);
        for k in 0..1000 {
            g.add_edge(k, k + 1, Pose::identity()).unwrap();
        }
        let noise = NoiseSpec {
            sigma_rot: 0.05,
            sigma_trans: 0.05,
            seed: 3,
        };
        let p = perturb_measurements(&g, &noise).unwrap();
        let mean = p.edges().iter().map(|e| e.measurement.rotation.angle()).sum::<f64>() / 1000.0;
        assert!((0.04..=0.12).contains(&mean), "{mean}");
        assert_eq!(perturb_measurements(&g, &noise).unwrap(), p);
    }
}
