//! `hodgereg` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 solver failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hodgereg::cloud::PointCloud;
use hodgereg::config::RunConfig;
use hodgereg::error::Error;
use hodgereg::eval::{evaluate, evaluation_graph, loop_deviation};
use hodgereg::graph::{Loop, ViewingGraph};
use hodgereg::hodge::{cotangent_weights, extend_form, PoissonSystem};
use hodgereg::io;
use hodgereg::pipeline::{initial_form, measured_motion, register, Prepared};
use hodgereg::surface::{embed, triangulate};
use hodgereg::synth::{generate_loop_scene, SyntheticScene};

const GRAPH_FILE: &str = "graph.g2o";
const TRUTH_FILE: &str = "truth.tum";
const CONFIG_FILE: &str = "run.cfg";

#[derive(Parser, Debug)]
#[command(name = "hodgereg", version, about = "Globally consistent pose-graph registration")]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set iterations=5`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded loop scene: frames, true trajectory, noisy pose graph
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a pose graph and print the loop deviation after each pass
    Register {
        graph: Option<PathBuf>,
        /// Write the final trajectory here (TUM format)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print wall-clock time per pass
        #[arg(long)]
        timing: bool,
    },
    /// Register a scene directory's graph and score it against its frames
    Evaluate {
        scene: Option<PathBuf>,
        /// Write the report as CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List fundamental cycles and homology loops with their raw deviation
    Loops { graph: Option<PathBuf> },
    /// Embed the graph on a surface and print V, E, F and genus
    Embed {
        graph: Option<PathBuf>,
        /// Dump the surface as OFF
        #[arg(long)]
        off: Option<PathBuf>,
        /// Dump the first Poisson system as COO triplets
        #[arg(long)]
        coo: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SolverDiverged { .. } | Error::NoConvergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    cfg.apply_env().map_err(usage)?;
    for pair in &cli.overrides {
        cfg.set_pair(pair).map_err(usage)?;
    }
    Ok(cfg)
}

fn pick(arg: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    arg.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("no {what} given (argument or config key)")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => cmd_synth(&cfg, &pick(out, &cfg.output, "output directory")?),
        Command::Register { graph, out, timing } => {
            let out = out.clone().or_else(|| cfg.output.clone());
            cmd_register(&cfg, &pick(graph, &cfg.graph, "graph file")?, out.as_deref(), *timing)
        }
        Command::Evaluate { scene, csv } => {
            cmd_evaluate(&cfg, &pick(scene, &cfg.scene, "scene directory")?, csv.as_deref())
        }
        Command::Loops { graph } => cmd_loops(&cfg, &pick(graph, &cfg.graph, "graph file")?),
        Command::Embed { graph, off, coo } => cmd_embed(
            &cfg,
            &pick(graph, &cfg.graph, "graph file")?,
            off.as_deref(),
            coo.as_deref(),
        ),
    }
}

fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<String, Failure> {
    let scene = generate_loop_scene(&cfg.scene_params())?.with_noise(cfg.noise());
    let topology = evaluation_graph(&scene, cfg.metric, &cfg.eval_options())?;
    let measured = scene.noisy_measurements(&topology)?;
    for (k, frame) in scene.frames.iter().enumerate() {
        io::write_cloud(&io::frame_file(dir, k), frame)?;
    }
    io::write_tum(&dir.join(TRUTH_FILE), &scene.truth)?;
    io::write_pose_graph(&dir.join(GRAPH_FILE), &measured, None)?;
    io::write_text(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    Ok(format!(
        "wrote {} frames and {} {} edges (seed {}, noise seed {}) to {}\n",
        scene.frames.len(),
        measured.edge_count(),
        cfg.metric,
        cfg.seed,
        cfg.noise().seed,
        dir.display()
    ))
}

fn cmd_register(cfg: &RunConfig, graph: &Path, out: Option<&Path>, timing: bool) -> Result<String, Failure> {
    let g = io::read_pose_graph(graph)?.graph;
    let reg = register(&g, &cfg.register_options())?;
    let mut text = format!(
        "# {} frames, {} edges, genus {}, chart {}\n",
        g.node_count(),
        g.edge_count(),
        reg.prepared.surface.genus(),
        cfg.chart
    );
    text.push_str("iter D_fundamental D_homology triangle_exactness loop_exactness solver_residual");
    text.push_str(if timing { " runtime_ms\n" } else { "\n" });
    for r in &reg.reports {
        let _ = write!(
            text,
            "{} {:.6e} {:.6e} {:.3e} {:.3e} {:.3e}",
            r.iteration, r.d_fundamental, r.d_homology, r.triangle_exactness, r.loop_exactness, r.solver_residual
        );
        if timing {
            let _ = write!(text, " {:.3}", r.runtime_ms);
        }
        text.push('\n');
    }
    if let Some(path) = out {
        io::write_tum(path, reg.final_trajectory())?;
        let _ = writeln!(text, "# trajectory written to {}", path.display());
    }
    Ok(text)
}

/// Frames and true trajectory of a directory written by `synth`.
fn load_scene(cfg: &RunConfig, dir: &Path) -> Result<SyntheticScene, Failure> {
    let truth = io::read_tum(&dir.join(TRUTH_FILE))?;
    let frames = (0..truth.len())
        .map(|k| io::read_cloud(&io::frame_file(dir, k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticScene {
        params: cfg.scene_params(),
        world: PointCloud::default(),
        truth,
        frames,
        noise: cfg.noise(),
    })
}

fn cmd_evaluate(cfg: &RunConfig, dir: &Path, csv: Option<&Path>) -> Result<String, Failure> {
    let scene = load_scene(cfg, dir)?;
    let graph = cfg.graph.clone().unwrap_or_else(|| dir.join(GRAPH_FILE));
    let measured = io::read_pose_graph(&graph)?.graph;
    if measured.node_count() != scene.frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} has {} frames but the scene has {}",
            graph.display(),
            measured.node_count(),
            scene.frames.len()
        ))
        .into());
    }
    let opts = cfg.eval_options();
    let reg = register(&measured, &opts.register)?;
    let name = dir
        .file_name()
        .map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned());
    let report = evaluate(&name, &scene, &reg, cfg.metric, &opts)?;
    if let Some(path) = csv {
        io::write_text(path, &report.to_csv())?;
    }
    Ok(report.to_text())
}

/// Loop with auxiliary vertices replaced by the frames they stand for.
fn frame_walk(prep: &Prepared, l: &Loop) -> String {
    let mut walk: Vec<usize> = Vec::new();
    for &v in &l.vertices {
        let f = prep.surface.anchor(v);
        if walk.last() != Some(&f) {
            walk.push(f);
        }
    }
    walk.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_loops(cfg: &RunConfig, graph: &Path) -> Result<String, Failure> {
    let g = io::read_pose_graph(graph)?.graph;
    let prep = Prepared::new(&g, cfg.order())?;
    let motion = |a: usize, b: usize| measured_motion(&g, &prep.surface, a, b);
    let mut text = String::new();
    for (label, loops) in [("fundamental", &prep.fundamental), ("homology", &prep.homology)] {
        let _ = writeln!(text, "{label} {}", loops.len());
        for (k, l) in loops.iter().enumerate() {
            let d = loop_deviation(std::slice::from_ref(l), motion)?;
            let _ = writeln!(text, "  {k}: D={d:.6e}  {}", frame_walk(&prep, l));
        }
    }
    let _ = writeln!(
        text,
        "total D_fundamental={:.6e} D_homology={:.6e}",
        loop_deviation(&prep.fundamental, motion)?,
        loop_deviation(&prep.homology, motion)?
    );
    Ok(text)
}

fn cmd_embed(cfg: &RunConfig, graph: &Path, off: Option<&Path>, coo: Option<&Path>) -> Result<String, Failure> {
    let g: ViewingGraph = io::read_pose_graph(graph)?.graph;
    let s = embed(&g, cfg.order())?;
    let mut text = format!(
        "V={} E={} F={} genus={}\n",
        s.vertex_count(),
        s.edge_count(),
        s.face_count(),
        s.genus()
    );
    if let Some(path) = off {
        io::write_text(path, &io::format_off(&s))?;
        let _ = writeln!(text, "# surface written to {}", path.display());
    }
    if let Some(path) = coo {
        let t = triangulate(&s)?;
        let omega = extend_form(&g, &t, &initial_form(&g, cfg.chart)?)?;
        let system = PoissonSystem::assemble(t.vertex_count(), cotangent_weights(&t), &omega)?;
        let mut buf = Vec::new();
        system.write_coo(&mut buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        io::write_text(path, &String::from_utf8_lossy(&buf))?;
        let _ = writeln!(text, "# Poisson system written to {}", path.display());
    }
    Ok(text)
}
