use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn hodgereg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hodgereg"))
        .args(args)
        .env_remove("HODGE_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn embed_triangle() {
    let o = hodgereg(&["embed", data("triangle.g2o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "V=3 E=3 F=2 genus=0\n");
}

#[test]
fn register_sample_scene_converges() {
    let graph = data("sample/graph.g2o");
    let before = fs::read(&graph).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("final.tum");
    let o = hodgereg(&[
        "--set",
        "iterations=3",
        "register",
        graph.to_str().unwrap(),
        "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d: Vec<f64> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| {
            let f: Vec<f64> = l
                .split_whitespace()
                .skip(1)
                .take(2)
                .map(|x| x.parse().unwrap())
                .collect();
            f[0] + f[1]
        })
        .collect();
    assert_eq!(d.len(), 4);
    assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
    assert!(d[3] <= 1e-6, "{d:?}");
    assert_eq!(fs::read_to_string(&traj).unwrap().lines().count(), 12);
    assert_eq!(fs::read(&graph).unwrap(), before);
    // same input, same output
    let again = hodgereg(&["register", graph.to_str().unwrap()]);
    let strip = |s: String| {
        s.lines()
            .filter(|l| !l.starts_with("# trajectory"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(stdout(&again)), strip(stdout(&o)));
}

#[test]
fn malformed_edge_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.g2o");
    fs::write(
        &bad,
        "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1\nEDGE_SE3:QUAT 1 2 0 0 x 0 0 0 1\n",
    )
    .unwrap();
    let o = hodgereg(&["register", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bad.g2o:2:") && msg.contains("`tz`"), "{msg}");
}

#[test]
fn missing_file_and_disconnected_graph_are_data_errors() {
    assert_eq!(hodgereg(&["loops", "/nonexistent/g.g2o"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split.g2o");
    fs::write(
        &split,
        "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1\nEDGE_SE3:QUAT 2 3 0 0 0 0 0 0 1\n",
    )
    .unwrap();
    let o = hodgereg(&["register", split.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let tri = data("triangle.g2o");
    let tri = tri.to_str().unwrap();
    assert_eq!(hodgereg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hodgereg(&["register"]).status.code(), Some(1));
    assert_eq!(
        hodgereg(&["--set", "iterations=0", "register", tri]).status.code(),
        Some(1)
    );
    assert_eq!(hodgereg(&["--set", "colour=blue", "embed", tri]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "iterations = 2\nsigma = -1\n").unwrap();
    let o = hodgereg(&["--config", cfg.to_str().unwrap(), "embed", tri]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.cfg:2:"), "{}", stderr(&o));
    assert_eq!(hodgereg(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_deterministic_and_seed_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hodgereg"));
        cmd.args(["--set", "n_frames=10", "--set", "points_per_frame=80", "synth", "--out"])
            .arg(&out)
            .env_remove("HODGE_SEED");
        if let Some(s) = seed {
            cmd.env("HODGE_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read_to_string(out.join("graph.g2o")).unwrap(),
            fs::read_to_string(out.join("frame_000.ply")).unwrap(),
        )
    };
    let a = run("a", None);
    assert_eq!(run("b", None), a);
    let c = run("c", Some("5"));
    assert_ne!(c.1, a.1);
    assert!(fs::read_to_string(dir.path().join("c/run.cfg"))
        .unwrap()
        .contains("seed = 5\n"));
}

#[test]
fn evaluate_and_loops_on_sample() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    let o = hodgereg(&[
        "evaluate",
        data("sample").to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("scene,metric_graph,iteration,mean_score,D_fundamental,D_homology,runtime_ms")
    );
    let scores: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 4);
    assert!(scores[3] >= scores[0], "{scores:?}");

    let o = hodgereg(&["loops", data("sample/graph.g2o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    // 12 frames, 27 edges: 16 independent cycles
    assert!(out.starts_with("fundamental 16\n"), "{out}");
    assert!(out.contains("\nhomology 14\n"), "{out}");
}

#[test]
fn embed_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let off = dir.path().join("s.off");
    let coo = dir.path().join("s.coo");
    let o = hodgereg(&[
        "embed",
        data("triangle.g2o").to_str().unwrap(),
        "--off",
        off.to_str().unwrap(),
        "--coo",
        coo.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read_to_string(&off).unwrap().starts_with("OFF\n3 2 3\n"));
    assert!(fs::read_to_string(&coo).unwrap().starts_with("# laplacian 3 x 3\n"));
}
