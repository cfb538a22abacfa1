//! Run configuration: `key = value` lines, `#` comments.
//!
//! Flag overrides go through [`RunConfig::set`] with the same keys, and
//! `HODGE_SEED` replaces `seed` when set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, GraphMetric};
use crate::hodge::SolverOptions;
use crate::icp::{DEFAULT_SCORE_OVERLAP, DEFAULT_SCORE_SIGMA};
use crate::pipeline::{Initialization, RegisterOptions};
use crate::se3::Chart;
use crate::surface::EmbeddingOrder;
use crate::synth::{NoiseSpec, SceneParams};

pub const SEED_ENV: &str = "HODGE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub chart: Chart,
    pub iterations: usize,
    pub init: Initialization,
    pub metric: GraphMetric,
    pub centroid_threshold: f64,
    pub iou_threshold: f64,
    pub voxel: f64,
    /// `None` embeds with ascending neighbor order.
    pub embed_seed: Option<u64>,
    pub solver_tolerance: f64,
    pub solver_max_iter_factor: usize,
    pub sigma: f64,
    pub overlap: f64,
    pub seed: u64,
    /// Defaults to `100 + seed`.
    pub noise_seed: Option<u64>,
    pub n_frames: usize,
    pub points_per_frame: usize,
    pub room_size: f64,
    pub capture_radius: f64,
    pub path_radius: f64,
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub graph: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalOptions::default();
        let scene = SceneParams::default();
        let solver = SolverOptions::default();
        Self {
            chart: Chart::Se3Log,
            iterations: 3,
            init: Initialization::Chained,
            metric: GraphMetric::Centroid,
            centroid_threshold: eval.centroid_threshold,
            iou_threshold: eval.iou_threshold,
            voxel: eval.voxel,
            embed_seed: None,
            solver_tolerance: solver.tolerance,
            solver_max_iter_factor: solver.max_iter_factor,
            sigma: DEFAULT_SCORE_SIGMA,
            overlap: DEFAULT_SCORE_OVERLAP,
            seed: scene.seed,
            noise_seed: None,
            n_frames: scene.n_frames,
            points_per_frame: scene.points_per_frame,
            room_size: scene.room_size,
            capture_radius: scene.capture_radius,
            path_radius: scene.path_radius,
            sigma_rot: 0.05,
            sigma_trans: 0.05,
            graph: None,
            scene: None,
            output: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "chart",
    "iterations",
    "init",
    "metric",
    "centroid_threshold",
    "iou_threshold",
    "voxel",
    "embed_seed",
    "solver_tolerance",
    "solver_max_iter_factor",
    "sigma",
    "overlap",
    "seed",
    "noise_seed",
    "n_frames",
    "points_per_frame",
    "room_size",
    "capture_radius",
    "path_radius",
    "sigma_rot",
    "sigma_trans",
    "graph",
    "scene",
    "output",
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn non_negative(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be non-negative, got {v}"))
    }
}

fn positive_int(v: &str) -> std::result::Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be at least 1".into()),
        n => Ok(n),
    }
}

fn optional_seed(v: &str) -> std::result::Result<Option<u64>, String> {
    match v {
        "none" | "" => Ok(None),
        _ => num(v).map(Some),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Applies one key. The error message names the problem, not the key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "chart" => self.chart = v.parse().map_err(|e: Error| e.to_string())?,
            "iterations" => self.iterations = positive_int(v)?,
            "init" => {
                self.init = match v {
                    "chained" => Initialization::Chained,
                    "identity" => Initialization::Identity,
                    _ => return Err(format!("expected chained or identity, got {v:?}")),
                }
            }
            "metric" => self.metric = v.parse().map_err(|e: Error| e.to_string())?,
            "centroid_threshold" => self.centroid_threshold = positive(v)?,
            "iou_threshold" => {
                let x = positive(v)?;
                if x > 1.0 {
                    return Err(format!("must lie in (0, 1], got {v}"));
                }
                self.iou_threshold = x;
            }
            "voxel" => self.voxel = positive(v)?,
            "embed_seed" => self.embed_seed = optional_seed(v)?,
            "solver_tolerance" => self.solver_tolerance = positive(v)?,
            "solver_max_iter_factor" => self.solver_max_iter_factor = positive_int(v)?,
            "sigma" => self.sigma = positive(v)?,
            "overlap" => self.overlap = positive(v)?,
            "seed" => self.seed = num(v)?,
            "noise_seed" => self.noise_seed = optional_seed(v)?,
            "n_frames" => {
                let n = positive_int(v)?;
                if n < 3 {
                    return Err("a loop scene needs at least 3 frames".into());
                }
                self.n_frames = n;
            }
            "points_per_frame" => self.points_per_frame = positive_int(v)?,
            "room_size" => self.room_size = positive(v)?,
            "capture_radius" => self.capture_radius = positive(v)?,
            "path_radius" => self.path_radius = non_negative(v)?,
            "sigma_rot" => self.sigma_rot = non_negative(v)?,
            "sigma_trans" => self.sigma_trans = non_negative(v)?,
            "graph" => self.graph = optional_path(v),
            "scene" => self.scene = optional_path(v),
            "output" => self.output = optional_path(v),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// `key=value` override, as given on a command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v).map_err(|m| Error::invalid(format!("{}: {m}", k.trim())))
    }

    /// Starts from the defaults and applies every line of `text`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |field: &str, message: String| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                field: field.to_string(),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("line", "expected key = value".into()))?;
            cfg.set(key, value).map_err(|m| parse_err(key.trim(), m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_text(path)?, path)
    }

    /// Replaces `seed` with the value of `HODGE_SEED`, if given.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        let v = std::env::var(SEED_ENV).ok();
        self.apply_seed_override(v.as_deref())
    }

    /// Every key, one per line; parses back to the same config.
    pub fn to_text(&self) -> String {
        let seed = |s: Option<u64>| s.map_or("none".to_string(), |x| x.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let init = match self.init {
            Initialization::Chained => "chained",
            Initialization::Identity => "identity",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("chart", self.chart.to_string());
        kv("iterations", self.iterations.to_string());
        kv("init", init.into());
        kv("metric", self.metric.to_string());
        kv("centroid_threshold", self.centroid_threshold.to_string());
        kv("iou_threshold", self.iou_threshold.to_string());
        kv("voxel", self.voxel.to_string());
        kv("embed_seed", seed(self.embed_seed));
        kv("solver_tolerance", self.solver_tolerance.to_string());
        kv("solver_max_iter_factor", self.solver_max_iter_factor.to_string());
        kv("sigma", self.sigma.to_string());
        kv("overlap", self.overlap.to_string());
        kv("seed", self.seed.to_string());
        kv("noise_seed", seed(self.noise_seed));
        kv("n_frames", self.n_frames.to_string());
        kv("points_per_frame", self.points_per_frame.to_string());
        kv("room_size", self.room_size.to_string());
        kv("capture_radius", self.capture_radius.to_string());
        kv("path_radius", self.path_radius.to_string());
        kv("sigma_rot", self.sigma_rot.to_string());
        kv("sigma_trans", self.sigma_trans.to_string());
        kv("graph", path(&self.graph));
        kv("scene", path(&self.scene));
        kv("output", path(&self.output));
        out
    }

    pub fn order(&self) -> EmbeddingOrder {
        self.embed_seed
            .map_or(EmbeddingOrder::Ascending, EmbeddingOrder::SeededRandom)
    }

    pub fn register_options(&self) -> RegisterOptions {
        RegisterOptions {
            iterations: self.iterations,
            chart: self.chart,
            order: self.order(),
            solver: SolverOptions {
                tolerance: self.solver_tolerance,
                max_iter_factor: self.solver_max_iter_factor,
                ..SolverOptions::default()
            },
            init: self.init,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            centroid_threshold: self.centroid_threshold,
            iou_threshold: self.iou_threshold,
            voxel: self.voxel,
            sigma: self.sigma,
            overlap: self.overlap,
            register: self.register_options(),
        }
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            n_frames: self.n_frames,
            room_size: self.room_size,
            points_per_frame: self.points_per_frame,
            capture_radius: self.capture_radius,
            path_radius: self.path_radius,
            seed: self.seed,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma_rot: self.sigma_rot,
            sigma_trans: self.sigma_trans,
            seed: self.noise_seed.unwrap_or(100 + self.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("run.cfg")
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        for pair in [
            "chart=so3_plus_t",
            "iterations=5",
            "init=identity",
            "metric=iou",
            "embed_seed=7",
            "voxel=0.025",
            "graph=data/g.g2o",
            "sigma_rot=0",
        ] {
            c.set_pair(pair).unwrap();
        }
        assert_eq!(RunConfig::parse(&c.to_text(), p()).unwrap(), c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text(), p()).unwrap(), d);
        assert_eq!(KEYS.len(), d.to_text().lines().count());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\niterations = 4  # more\n", p()).unwrap();
        assert_eq!(c.iterations, 4);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        match RunConfig::parse("iterations=2\nitertions=3\n", p()) {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "itertions")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_positive_values_are_rejected() {
        let mut c = RunConfig::default();
        for bad in [
            "iterations=0",
            "sigma=0",
            "voxel=-1",
            "centroid_threshold=nan",
            "iou_threshold=1.5",
            "n_frames=2",
            "sigma_rot=-0.1",
            "solver_tolerance=0",
        ] {
            assert!(c.set_pair(bad).is_err(), "{bad}");
        }
        assert!(c.set_pair("no equals sign").is_err());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::default();
        c.apply_seed_override(None).unwrap();
        assert_eq!(c.seed, 0);
        c.apply_seed_override(Some("42")).unwrap();
        assert_eq!((c.seed, c.noise().seed, c.scene_params().seed), (42, 142, 42));
        assert!(c.apply_seed_override(Some("-1")).is_err());
    }

    #[test]
    fn options_follow_config() {
        let mut c = RunConfig::default();
        c.set_pair("embed_seed=3").unwrap();
        c.set_pair("solver_tolerance=1e-12").unwrap();
        let r = c.register_options();
        assert_eq!(r.order, EmbeddingOrder::SeededRandom(3));
        assert_eq!(r.solver.tolerance, 1e-12);
        assert_eq!(c.eval_options().register, r);
    }
}
