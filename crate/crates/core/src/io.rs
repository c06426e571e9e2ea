//! ASCII PLY point clouds with JSON sidecars, and atomic file writes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};

/// Writes `bytes` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    sensor_pose: RigidTransform,
    vertical_angular_resolution: f64,
}

pub fn sidecar_path(ply: &Path) -> PathBuf {
    ply.with_extension("json")
}

/// Serializes points as ASCII PLY with single-precision `x y z` and an optional
/// per-vertex `quality` property.
pub fn ply_string(points: &[Point3], quality: Option<&[f32]>) -> String {
    let mut out = String::with_capacity(points.len() * 32 + 160);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if quality.is_some() {
        out.push_str("property float quality\n");
    }
    out.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
        if let Some(q) = quality {
            let _ = write!(out, " {}", q[i]);
        }
        out.push('\n');
    }
    out
}

/// Parses an ASCII PLY vertex list; only `x`, `y`, `z` are kept.
pub fn parse_ply(text: &str) -> Result<Vec<Point3>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(Error::Format("only ASCII PLY is supported".into())),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    let axis = |name: &str| {
        props.iter().position(|p| p == name).ok_or_else(|| Error::Format(format!("missing property {name}")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|w| w.parse::<f32>().map_err(|_| Error::Format(format!("bad number {w:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(Error::Format("short vertex line".into()));
        }
        points.push(Point3::new(vals[ix] as f64, vals[iy] as f64, vals[iz] as f64));
    }
    if points.len() != count {
        return Err(Error::Format(format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(points)
}

/// Writes `<path>` (PLY) and its `.json` sidecar.
pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_atomic(path, ply_string(&cloud.points, None).as_bytes())?;
    let sidecar = Sidecar {
        sensor_pose: cloud.sensor_pose,
        vertical_angular_resolution: cloud.vertical_angular_resolution,
    };
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let points = parse_ply(&std::fs::read_to_string(path)?)?;
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    PointCloud::new(points, sidecar.sensor_pose, sidecar.vertical_angular_resolution)
}
