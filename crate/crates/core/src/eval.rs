//! Loop deviation and the score report.

use rayon::prelude::*;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{
    build_by_centroid, build_by_iou, Loop, ViewingGraph, DEFAULT_CENTROID_THRESHOLD, DEFAULT_IOU_THRESHOLD,
    DEFAULT_VOXEL,
};
use crate::icp::{PlaneScorer, DEFAULT_SCORE_OVERLAP, DEFAULT_SCORE_SIGMA};
use crate::pipeline::{register, Prepared, RegisterOptions, Registration, Trajectory};
use crate::se3::Pose;
use crate::synth::SyntheticScene;

/// Sum over loops of `|prod M(v_k, v_k+1) - I|_F`.
///
/// `motion(a, b)` maps frame `b` into frame `a`; a missing motion is an error.
pub fn loop_deviation(loops: &[Loop], motion: impl Fn(usize, usize) -> Option<Pose>) -> Result<f64> {
    let mut total = 0.0;
    for (index, l) in loops.iter().enumerate() {
        if !l.is_closed() {
            return Err(Error::OpenLoop { index });
        }
        let mut prod = Pose::identity();
        for (a, b) in l.steps() {
            let m =
                motion(a, b).ok_or_else(|| Error::invalid(format!("no motion for step ({a}, {b}) of loop {index}")))?;
            prod = prod.compose(&m);
        }
        total += prod.frobenius_dev();
    }
    Ok(total)
}

/// Which overlap test builds the evaluation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMetric {
    Centroid,
    Iou,
}

impl GraphMetric {
    pub const ALL: [GraphMetric; 2] = [GraphMetric::Centroid, GraphMetric::Iou];

    pub fn as_str(&self) -> &'static str {
        match self {
            GraphMetric::Centroid => "centroid",
            GraphMetric::Iou => "iou",
        }
    }
}

impl std::fmt::Display for GraphMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GraphMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centroid" => Ok(GraphMetric::Centroid),
            "iou" => Ok(GraphMetric::Iou),
            other => Err(Error::invalid(format!("unknown graph metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub centroid_threshold: f64,
    pub iou_threshold: f64,
    pub voxel: f64,
    pub sigma: f64,
    /// Nearest-neighbor distance beyond which a pair is outside the overlap.
    pub overlap: f64,
    pub register: RegisterOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            centroid_threshold: DEFAULT_CENTROID_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            voxel: DEFAULT_VOXEL,
            sigma: DEFAULT_SCORE_SIGMA,
            overlap: DEFAULT_SCORE_OVERLAP,
            register: RegisterOptions::default(),
        }
    }
}

/// Evaluation graph over the frames, placed in the world by the true poses.
pub fn evaluation_graph(scene: &SyntheticScene, metric: GraphMetric, opts: &EvalOptions) -> Result<ViewingGraph> {
    let world: Vec<_> = scene
        .frames
        .iter()
        .zip(&scene.truth.poses)
        .map(|(c, t)| c.transformed(t))
        .collect();
    let g = match metric {
        GraphMetric::Centroid => build_by_centroid(&world, opts.centroid_threshold)?,
        GraphMetric::Iou => build_by_iou(&world, opts.iou_threshold, opts.voxel)?,
    };
    Ok(g.map_measurements(|e| scene.truth.relative(e.i, e.j)))
}

/// Mean over edges `(i, j)` of the score of frame `j` moved into frame `i` by
/// `T_i^-1 T_j`, against frame `i`.
pub fn mean_edge_score(
    scene: &SyntheticScene,
    eval: &ViewingGraph,
    traj: &Trajectory,
    sigma: f64,
    overlap: f64,
) -> Result<f64> {
    if eval.edge_count() == 0 {
        return Err(Error::invalid("evaluation graph has no edges"));
    }
    let scorers = scene
        .frames
        .iter()
        .map(|c| PlaneScorer::with_overlap(c, overlap))
        .collect::<Result<Vec<_>>>()?;
    let scores = eval
        .edges()
        .par_iter()
        .map(|e| scorers[e.i].score(&scene.frames[e.j], &traj.relative(e.i, e.j), sigma))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene: String,
    pub metric_graph: GraphMetric,
    pub iteration: usize,
    pub mean_score: f64,
    pub d_fundamental: f64,
    pub d_homology: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub sigma: f64,
    pub overlap: f64,
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "scene,metric_graph,iteration,mean_score,D_fundamental,D_homology,runtime_ms";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.scene, r.metric_graph, r.iteration, r.mean_score, r.d_fundamental, r.d_homology, r.runtime_ms
            );
        }
        out
    }

    /// Aligned table; the header states how edges are scored.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# score = exp(-mean |n.(M p - q)| / {:.6}) over pairs within {:.6} with normals within 45 deg, frame j moved into frame i for edge (i, j)\n",
            self.sigma, self.overlap
        );
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:>4} {:>10} {:>14} {:>14} {:>12}",
            "scene", "graph", "iter", "score", "D_fund", "D_hom", "ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:<8} {:>4} {:>10.6} {:>14.6} {:>14.6} {:>12.6}",
                r.scene,
                r.metric_graph.as_str(),
                r.iteration,
                r.mean_score,
                r.d_fundamental,
                r.d_homology,
                r.runtime_ms
            );
        }
        out
    }
}

/// Score and loop deviation of a single trajectory on an evaluation graph.
///
/// Motions implied by one trajectory telescope around every loop, so `D` here is
/// zero up to rounding; it is a sanity check on the trajectory, not on the
/// measurements.
pub fn evaluate_trajectory(
    scene: &SyntheticScene,
    eval: &ViewingGraph,
    traj: &Trajectory,
    opts: &EvalOptions,
) -> Result<(f64, f64, f64)> {
    let prep = Prepared::new(eval, opts.register.order)?;
    let s = &prep.surface;
    let motion = |a: usize, b: usize| Some(traj.relative(s.anchor(a), s.anchor(b)));
    Ok((
        mean_edge_score(scene, eval, traj, opts.sigma, opts.overlap)?,
        loop_deviation(&prep.fundamental, motion)?,
        loop_deviation(&prep.homology, motion)?,
    ))
}

/// One row per trajectory of `reg`: the chained start as iteration 0, then each
/// pass. Scores come from the evaluation graph; `D` values and runtimes come
/// from the registration's own reports (raw measurements at iteration 0,
/// corrected motions after each pass), with runtimes accumulated.
pub fn evaluate(
    name: &str,
    scene: &SyntheticScene,
    reg: &Registration,
    metric: GraphMetric,
    opts: &EvalOptions,
) -> Result<Report> {
    let eval = evaluation_graph(scene, metric, opts)?;
    let mut rows = Vec::new();
    let mut elapsed = 0.0;
    let trajectories = std::iter::once(&reg.initial).chain(&reg.passes);
    for (traj, rep) in trajectories.zip(&reg.reports) {
        elapsed += rep.runtime_ms;
        rows.push(ReportRow {
            scene: name.to_string(),
            metric_graph: metric,
            iteration: rep.iteration,
            mean_score: mean_edge_score(scene, &eval, traj, opts.sigma, opts.overlap)?,
            d_fundamental: rep.d_fundamental,
            d_homology: rep.d_homology,
            runtime_ms: elapsed,
        });
    }
    Ok(Report {
        sigma: opts.sigma,
        overlap: opts.overlap,
        rows,
    })
}

/// Registers the scene's measurement graph and scores it on both evaluation graphs.
pub fn evaluate_scene(
    name: &str,
    scene: &SyntheticScene,
    measured: &ViewingGraph,
    opts: &EvalOptions,
) -> Result<Report> {
    let reg = register(measured, &opts.register)?;
    let mut report = Report {
        sigma: opts.sigma,
        overlap: opts.overlap,
        rows: Vec::new(),
    };
    for metric in GraphMetric::ALL {
        report.rows.extend(evaluate(name, scene, &reg, metric, opts)?.rows);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::complete_graph;
    use crate::synth::{generate_loop_scene, NoiseSpec, SceneParams};
    use nalgebra::Vector3;

    fn small_scene() -> SyntheticScene {
        generate_loop_scene(&SceneParams {
            n_frames: 10,
            points_per_frame: 600,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn consistent_motions_have_no_deviation() {
        let scene = small_scene();
        let g = scene.exact_measurements(&complete_graph(10));
        let prep = Prepared::new(&g, Default::default()).unwrap();
        let d = loop_deviation(&prep.fundamental, |a, b| g.measurement(a, b)).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn one_extra_unit_translation() {
        let triangle = Loop::new(vec![0, 1, 2, 0]);
        let motion = |a: usize, b: usize| {
            Some(if (a, b) == (2, 0) {
                Pose::from_translation(Vector3::x())
            } else {
                Pose::identity()
            })
        };
        assert!((loop_deviation(&[triangle], motion).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn open_loop_is_rejected() {
        let loops = [Loop::new(vec![0, 1, 2, 0]), Loop::new(vec![0, 1, 2])];
        match loop_deviation(&loops, |_, _| Some(Pose::identity())) {
            Err(Error::OpenLoop { index }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ground_truth_scores_one() {
        let scene = small_scene();
        let opts = EvalOptions::default();
        for metric in GraphMetric::ALL {
            let eval = evaluation_graph(&scene, metric, &opts).unwrap();
            let (score, df, dh) = evaluate_trajectory(&scene, &eval, &scene.truth, &opts).unwrap();
            assert!((score - 1.0).abs() < 1e-3, "{metric}: {score}");
            assert!(df < 1e-10 && dh < 1e-10);
        }
    }

    #[test]
    fn report_is_deterministic_and_six_decimal() {
        let scene = small_scene().with_noise(NoiseSpec {
            sigma_rot: 0.05,
            sigma_trans: 0.05,
            seed: 1,
        });
        let opts = EvalOptions::default();
        let measured = scene
            .noisy_measurements(&evaluation_graph(&scene, GraphMetric::Centroid, &opts).unwrap())
            .unwrap();
        let a = evaluate_scene("loop", &scene, &measured, &opts).unwrap();
        let b = evaluate_scene("loop", &scene, &measured, &opts).unwrap();
        let strip = |r: &Report| -> Vec<_> {
            r.rows
                .iter()
                .map(|x| (x.iteration, x.mean_score, x.d_fundamental, x.d_homology))
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.rows.len(), 8);
        let csv = a.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 7);
            for f in &fields[3..] {
                assert_eq!(f.split('.').nth(1).map(str::len), Some(6), "{line}");
            }
        }
        assert!(a.to_text().starts_with("# score"));
        for metric in GraphMetric::ALL {
            let rows: Vec<_> = a.rows.iter().filter(|r| r.metric_graph == metric).collect();
            assert!(rows[3].mean_score >= rows[0].mean_score);
        }
    }
}
