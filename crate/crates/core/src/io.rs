//! Text formats: pose graphs, TUM trajectories, PLY/XYZ clouds, debug dumps.
//!
//! Quaternions are stored `qx qy qz qw`. Floats are written in Rust's shortest
//! round-trip form, so write-then-read reproduces every value except for the
//! renormalization of quaternions on load.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::graph::ViewingGraph;
use crate::pipeline::Trajectory;
use crate::se3::{Pose, Rotation3};
use crate::surface::{spectral_layout, HalfedgeSurface};

pub const VERTEX_TAG: &str = "VERTEX_SE3:QUAT";
pub const EDGE_TAG: &str = "EDGE_SE3:QUAT";
const INFO_LEN: usize = 21;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Whitespace tokens of one line, with enough context for parse errors.
struct Record<'a> {
    path: &'a Path,
    line: usize,
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> Record<'a> {
    fn new(path: &'a Path, line: usize, text: &'a str) -> Self {
        Self {
            path,
            line,
            tokens: text.split_whitespace().collect(),
            pos: 0,
        }
    }

    fn error(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn next<T: FromStr>(&mut self, field: &str) -> Result<T> {
        let tok = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| self.error(field, "missing value"))?;
        self.pos += 1;
        tok.parse()
            .map_err(|_| self.error(field, format!("cannot parse {tok:?}")))
    }

    fn remaining(&self) -> usize {
        self.tokens.len() - self.pos
    }

    fn pose(&mut self) -> Result<Pose> {
        let t = Vector3::new(self.next("tx")?, self.next("ty")?, self.next("tz")?);
        let (x, y, z, w) = (self.next("qx")?, self.next("qy")?, self.next("qz")?, self.next("qw")?);
        let r = Rotation3::from_quaternion(x, y, z, w).map_err(|e| self.error("quaternion", e.to_string()))?;
        Ok(Pose::new(r, t))
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphFile {
    pub graph: ViewingGraph,
    /// Present when the file lists a vertex for every frame.
    pub poses: Option<Trajectory>,
}

/// Parses `VERTEX_SE3:QUAT` / `EDGE_SE3:QUAT` records. An edge may carry the 21
/// upper-triangle entries of its information matrix; they are accepted and
/// ignored. Frame ids must be `0..n`.
pub fn parse_pose_graph(text: &str, path: &Path) -> Result<PoseGraphFile> {
    let mut vertices: Vec<(usize, usize, Pose)> = Vec::new();
    let mut edges: Vec<(usize, usize, usize, Pose)> = Vec::new();
    for (line, body) in content_lines(text) {
        let mut rec = Record::new(path, line, body);
        let tag: String = rec.next("tag")?;
        match tag.as_str() {
            VERTEX_TAG => {
                let id = rec.next("id")?;
                let pose = rec.pose()?;
                if rec.remaining() != 0 {
                    return Err(rec.error("trailing", "unexpected values after qw"));
                }
                vertices.push((line, id, pose));
            }
            EDGE_TAG => {
                let i = rec.next("i")?;
                let j = rec.next("j")?;
                let pose = rec.pose()?;
                match rec.remaining() {
                    0 => {}
                    INFO_LEN => {
                        for k in 0..INFO_LEN {
                            rec.next::<f64>(&format!("information[{k}]"))?;
                        }
                    }
                    n => {
                        return Err(rec.error(
                            "information",
                            format!("expected 0 or {INFO_LEN} trailing values, found {n}"),
                        ))
                    }
                }
                edges.push((line, i, j, pose));
            }
            other => return Err(rec.error("tag", format!("unknown record type {other:?}"))),
        }
    }

    let max_id = vertices
        .iter()
        .map(|v| v.1)
        .chain(edges.iter().flat_map(|e| [e.1, e.2]))
        .max();
    let Some(max_id) = max_id else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            field: "records".into(),
            message: "file holds no vertices or edges".into(),
        });
    };
    let n = max_id + 1;

    let poses = if vertices.is_empty() {
        None
    } else {
        let mut slots: Vec<Option<Pose>> = vec![None; n];
        for &(line, id, pose) in &vertices {
            if slots[id].replace(pose).is_some() {
                return Err(Record::new(path, line, "").error("id", format!("vertex {id} listed twice")));
            }
        }
        let poses = slots
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                p.ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    field: "id".into(),
                    message: format!("no vertex record for frame {id}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(Trajectory { poses, iteration: 0 })
    };

    let mut graph = ViewingGraph::new(n);
    for (line, i, j, pose) in edges {
        graph
            .add_edge(i, j, pose)
            .map_err(|e| Record::new(path, line, "").error("i j", e.to_string()))?;
    }
    Ok(PoseGraphFile { graph, poses })
}

pub fn read_pose_graph(path: &Path) -> Result<PoseGraphFile> {
    parse_pose_graph(&read_text(path)?, path)
}

fn push_pose(out: &mut String, p: &Pose) {
    let t = p.translation;
    let [x, y, z, w] = p.rotation.to_quaternion();
    let _ = write!(out, "{} {} {} {} {} {} {}", t.x, t.y, t.z, x, y, z, w);
}

/// Vertices first (when given), then edges in id order.
pub fn format_pose_graph(g: &ViewingGraph, poses: Option<&Trajectory>) -> String {
    let mut out = String::new();
    if let Some(t) = poses {
        for (id, p) in t.poses.iter().enumerate() {
            let _ = write!(out, "{VERTEX_TAG} {id} ");
            push_pose(&mut out, p);
            out.push('\n');
        }
    }
    for e in g.edges() {
        let _ = write!(out, "{EDGE_TAG} {} {} ", e.i, e.j);
        push_pose(&mut out, &e.measurement);
        out.push('\n');
    }
    out
}

pub fn write_pose_graph(path: &Path, g: &ViewingGraph, poses: Option<&Trajectory>) -> Result<()> {
    write_text(path, &format_pose_graph(g, poses))
}

/// `timestamp tx ty tz qx qy qz qw`, timestamp = frame index.
pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (k, p) in traj.poses.iter().enumerate() {
        let _ = write!(out, "{k}.0 ");
        push_pose(&mut out, p);
        out.push('\n');
    }
    out
}

/// Poses in file order; timestamps are checked but otherwise unused.
pub fn parse_tum(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (line, body) in content_lines(text) {
        let mut rec = Record::new(path, line, body);
        let _stamp: f64 = rec.next("timestamp")?;
        poses.push(rec.pose()?);
        if rec.remaining() != 0 {
            return Err(rec.error("trailing", "unexpected values after qw"));
        }
    }
    Ok(Trajectory { poses, iteration: 0 })
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    parse_tum(&read_text(path)?, path)
}

pub fn write_tum(path: &Path, traj: &Trajectory) -> Result<()> {
    write_text(path, &format_tum(traj))
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (k, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &cloud.normals {
            let _ = write!(out, " {} {} {}", n[k].x, n[k].y, n[k].z);
        }
        out.push('\n');
    }
    out
}

/// ASCII PLY with `x y z` and optionally `nx ny nz` vertex properties, in any
/// order; other vertex properties and later elements are skipped.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, field: &str, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "magic", "expected `ply`")),
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = None;
    for (line, l) in lines.by_ref() {
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(err(line, "format", "only ASCII PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| err(line, "element vertex", "bad count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(err(line, "property", "list properties on vertices are not supported"));
                }
            }
            ["property", _, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_end = Some(line);
                break;
            }
            _ => return Err(err(line, "header", &format!("unexpected header line {l:?}"))),
        }
    }
    let header_end = header_end.ok_or_else(|| err(0, "end_header", "header never ends"))?;
    let count = count.ok_or_else(|| err(header_end, "element vertex", "no vertex element"))?;
    let find = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(header_end, "property", "vertex needs x, y and z")),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err(err(header_end, "property", "normals need all of nx, ny, nz")),
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if normal_idx.is_some() { count } else { 0 });
    for _ in 0..count {
        let (line, l) = lines
            .next()
            .ok_or_else(|| err(header_end, "vertex", "fewer vertex lines than declared"))?;
        let vals = l
            .split_whitespace()
            .enumerate()
            .map(|(k, t)| {
                t.parse::<f64>()
                    .map_err(|_| err(line, props.get(k).map_or("value", |s| s.as_str()), "not a number"))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != props.len() {
            return Err(err(
                line,
                "vertex",
                &format!("expected {} values, found {}", props.len(), vals.len()),
            ));
        }
        points.push(Point::new(vals[ix], vals[iy], vals[iz]));
        if let Some((a, b, c)) = normal_idx {
            normals.push(Vector3::new(vals[a], vals[b], vals[c]));
        }
    }
    let cloud = PointCloud {
        points,
        normals: normal_idx.map(|_| normals),
    };
    cloud
        .validate()
        .map_err(|e| err(header_end, "normals", &e.to_string()))?;
    Ok(cloud)
}

/// `x y z` or `x y z nx ny nz` per line; every line must have the same width.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (line, body) in content_lines(text) {
        let mut rec = Record::new(path, line, body);
        let w = rec.remaining();
        if w != 3 && w != 6 {
            return Err(rec.error("columns", format!("expected 3 or 6 values, found {w}")));
        }
        if *width.get_or_insert(w) != w {
            return Err(rec.error("columns", "line width differs from the first line"));
        }
        points.push(Point::new(rec.next("x")?, rec.next("y")?, rec.next("z")?));
        if w == 6 {
            normals.push(Vector3::new(rec.next("nx")?, rec.next("ny")?, rec.next("nz")?));
        }
    }
    let cloud = PointCloud {
        points,
        normals: (width == Some(6)).then_some(normals),
    };
    cloud.validate().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        field: "normals".into(),
        message: e.to_string(),
    })?;
    Ok(cloud)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for (k, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &cloud.normals {
            let _ = write!(out, " {} {} {}", n[k].x, n[k].y, n[k].z);
        }
        out.push('\n');
    }
    out
}

/// Loads `.ply` or anything else as XYZ.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    if is_ply(path) {
        parse_ply(&text, path)
    } else {
        parse_xyz(&text, path)
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let text = if is_ply(path) {
        format_ply(cloud)
    } else {
        format_xyz(cloud)
    };
    write_text(path, &text)
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// OFF text of the surface with spectral-layout coordinates; only for looking at.
pub fn format_off(s: &HalfedgeSurface) -> String {
    let pos = spectral_layout(s);
    let mut out = format!("OFF\n{} {} {}\n", s.vertex_count(), s.face_count(), s.edge_count());
    for p in &pos {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    for f in 0..s.face_count() {
        let vs = s.face_vertices(f);
        let _ = write!(out, "{}", vs.len());
        for v in vs {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

/// Frame file name used by scene directories.
pub fn frame_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:03}.ply"))
}
