//! Point clouds: a compact binary form and ASCII PLY.
//!
//! Binary layout: `count: u64` then `count` little-endian `f32` triplets.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use super::container::read_u64;
use crate::{Error, Result};

pub fn write_binary(points: &[[f64; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 12 * points.len());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_binary(mut bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    let n = read_u64(&mut bytes)? as usize;
    if bytes.len() != n * 12 {
        return Err(Error::Format(format!(
            "point cloud declares {n} points but carries {} bytes",
            bytes.len()
        )));
    }
    let mut pts = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        let mut p = [0.0; 3];
        for c in &mut p {
            bytes.read_exact(&mut buf)?;
            *c = f32::from_le_bytes(buf) as f64;
        }
        pts.push(p);
    }
    Ok(pts)
}

/// ASCII PLY with optional 8-bit vertex colors.
pub fn write_ply(points: &[[f64; 3]], colors: Option<&[[f64; 3]]>) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::shape("color count differs from point count"));
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(c) = colors {
            let q = c[i].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            let _ = write!(s, " {} {} {}", q[0], q[1], q[2]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Reads x/y/z from an ASCII PLY vertex element; other properties are ignored.
pub fn read_ply(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    for line in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", ..] => ascii = true,
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::Format("only ASCII PLY point clouds are supported".into()));
    }
    let count = count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    let col = |n: &str| {
        props
            .iter()
            .position(|p| p == n)
            .ok_or_else(|| Error::Format(format!("vertex property {n} missing")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("truncated vertex list".into()))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        if v.len() < props.len() {
            return Err(Error::Format("short vertex line".into()));
        }
        pts.push([v[ix], v[iy], v[iz]]);
    }
    Ok(pts)
}

pub fn save_binary(path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
    std::fs::write(path, write_binary(points))?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    read_binary(&std::fs::read(path)?)
}
