//! Text formats for point sets, edge lists and multi-frame trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::geometry::{Graph, PointSet};
use crate::{Error, Result};

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<[f64; 3]> {
    let vals: Vec<&str> = line.split_whitespace().collect();
    if vals.len() != 3 {
        return Err(parse_err(path, line_no, format!("expected 3 columns, found {}", vals.len())));
    }
    let mut row = [0.0f64; 3];
    for (k, v) in vals.iter().enumerate() {
        row[k] = v.parse().map_err(|_| parse_err(path, line_no, format!("'{v}' is not a number")))?;
        if !row[k].is_finite() {
            return Err(parse_err(path, line_no, format!("'{v}' is not finite")));
        }
    }
    Ok(row)
}

/// Frames separated by `#` header lines. A file with no headers is one frame.
pub fn parse_frames(path: &Path, text: &str) -> Result<Vec<PointSet>> {
    let mut frames = Vec::new();
    let mut current: Vec<[f64; 3]> = Vec::new();
    let mut start = 1;
    let mut flush = |rows: &mut Vec<[f64; 3]>, start: usize| -> Result<()> {
        if !rows.is_empty() {
            let p = PointSet::new(std::mem::take(rows)).map_err(|e| parse_err(path, start, e.to_string()))?;
            frames.push(p);
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.starts_with('#') {
            flush(&mut current, start)?;
            start = line_no + 1;
        } else if !t.is_empty() {
            current.push(parse_row(path, line_no, t)?);
        }
    }
    flush(&mut current, start)?;
    if frames.is_empty() {
        return Err(parse_err(path, 1, "no point rows found"));
    }
    Ok(frames)
}

pub fn read_frames(path: &Path) -> Result<Vec<PointSet>> {
    parse_frames(path, &read(path)?)
}

/// Exactly one frame.
pub fn read_points(path: &Path) -> Result<PointSet> {
    let mut frames = read_frames(path)?;
    if frames.len() != 1 {
        return Err(parse_err(path, 1, format!("expected one point set, found {}", frames.len())));
    }
    Ok(frames.remove(0))
}

pub fn read_edges(path: &Path, n: usize) -> Result<Graph> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Vec<&str> = t.split_whitespace().collect();
        if vals.len() != 2 {
            return Err(parse_err(path, i + 1, format!("expected 'u v', found {} columns", vals.len())));
        }
        let mut uv = [0usize; 2];
        for (k, v) in vals.iter().enumerate() {
            uv[k] = v.parse().map_err(|_| parse_err(path, i + 1, format!("'{v}' is not a node index")))?;
        }
        edges.push((uv[0], uv[1]));
    }
    Graph::new(n, edges).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn points_text(p: &PointSet) -> String {
    let mut s = String::new();
    for r in p.coords() {
        let _ = writeln!(s, "{} {} {}", fmt_f64(r[0]), fmt_f64(r[1]), fmt_f64(r[2]));
    }
    s
}

pub fn edges_text(g: &Graph) -> String {
    let mut s = String::new();
    for (u, v) in g.edges() {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

/// Frames with `# step <k>` headers.
pub fn trajectory_text(frames: &[(usize, PointSet)]) -> String {
    let mut s = String::new();
    for (k, p) in frames {
        let _ = writeln!(s, "# step {k}");
        s.push_str(&points_text(p));
    }
    s
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
