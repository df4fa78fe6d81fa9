//! Splat sets: a versioned binary list and the common 3DGS PLY layout.
//!
//! Binary layout: magic `"SSPLATS1"`, `count: u64`, then per primitive 14
//! little-endian `f64`: center, scale, rotation (w, x, y, z), opacity, color.

use std::fmt::Write as _;
use std::path::Path;

use super::container::read_u64;
use crate::render::GaussianPrimitive;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SSPLATS1";
/// Zeroth-order spherical harmonic basis constant.
const SH_C0: f64 = 0.28209479177387814;

fn fields(p: &GaussianPrimitive) -> [f64; 14] {
    let mut f = [0.0; 14];
    f[..3].copy_from_slice(&p.center);
    f[3..6].copy_from_slice(&p.scale);
    f[6..10].copy_from_slice(&p.rotation);
    f[10] = p.opacity;
    f[11..].copy_from_slice(&p.color);
    f
}

fn from_fields(f: &[f64; 14]) -> GaussianPrimitive {
    GaussianPrimitive {
        center: [f[0], f[1], f[2]],
        scale: [f[3], f[4], f[5]],
        rotation: [f[6], f[7], f[8], f[9]],
        opacity: f[10],
        color: [f[11], f[12], f[13]],
    }
}

pub fn write_binary(prims: &[GaussianPrimitive]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + prims.len() * 14 * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(prims.len() as u64).to_le_bytes());
    for p in prims {
        for v in fields(p) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_binary(bytes: &[u8]) -> Result<Vec<GaussianPrimitive>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a splat file (bad magic)".into()));
    }
    let mut rest = &bytes[8..];
    let n = read_u64(&mut rest)? as usize;
    if rest.len() != n * 14 * 8 {
        return Err(Error::Format("splat file length mismatch".into()));
    }
    Ok(rest
        .chunks_exact(14 * 8)
        .map(|c| {
            let mut f = [0.0; 14];
            for (k, b) in c.chunks_exact(8).enumerate() {
                f[k] = f64::from_le_bytes(b.try_into().unwrap());
            }
            from_fields(&f)
        })
        .collect())
}

const PLY_PROPS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1",
    "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

/// Binary little-endian PLY in the layout splat viewers expect: degree-0
/// harmonics, logit opacity, log scale.
pub fn write_ply(prims: &[GaussianPrimitive]) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", prims.len());
    for p in PLY_PROPS {
        let _ = writeln!(header, "property float {p}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for p in prims {
        let a = p.opacity.clamp(1e-6, 1.0 - 1e-6);
        let vals = [
            p.center[0],
            p.center[1],
            p.center[2],
            0.0,
            0.0,
            0.0,
            (p.color[0] - 0.5) / SH_C0,
            (p.color[1] - 0.5) / SH_C0,
            (p.color[2] - 0.5) / SH_C0,
            (a / (1.0 - a)).ln(),
            p.scale[0].ln(),
            p.scale[1].ln(),
            p.scale[2].ln(),
            p.rotation[0],
            p.rotation[1],
            p.rotation[2],
            p.rotation[3],
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Reads the layout written by [`write_ply`].
pub fn read_ply(bytes: &[u8]) -> Result<Vec<GaussianPrimitive>> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format("ply header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::Format(e.to_string()))?;
    if !header.starts_with("ply\nformat binary_little_endian") {
        return Err(Error::Format("expected binary little-endian PLY".into()));
    }
    let mut count = 0;
    let mut props = Vec::new();
    for line in header.lines() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["element", "vertex", n] => count = n.parse().map_err(|_| Error::Format("vertex count".into()))?,
            ["property", "float", name] => props.push(name.to_string()),
            ["property", ..] => return Err(Error::Format("only float properties supported".into())),
            _ => {}
        }
    }
    let idx = |n: &str| {
        props
            .iter()
            .position(|p| p == n)
            .ok_or_else(|| Error::Format(format!("ply property {n} missing")))
    };
    let cols: Vec<usize> = PLY_PROPS
        .iter()
        .filter(|p| !p.starts_with('n'))
        .map(|p| idx(p))
        .collect::<Result<_>>()?;
    let body = &bytes[end + marker.len()..];
    let stride = props.len() * 4;
    if body.len() != count * stride {
        return Err(Error::Format("ply body length mismatch".into()));
    }
    Ok(body
        .chunks_exact(stride)
        .map(|rec| {
            let v = |c: usize| f32::from_le_bytes(rec[c * 4..c * 4 + 4].try_into().unwrap()) as f64;
            let g: Vec<f64> = cols.iter().map(|&c| v(c)).collect();
            GaussianPrimitive {
                center: [g[0], g[1], g[2]],
                color: [g[3] * SH_C0 + 0.5, g[4] * SH_C0 + 0.5, g[5] * SH_C0 + 0.5],
                opacity: 1.0 / (1.0 + (-g[6]).exp()),
                scale: [g[7].exp(), g[8].exp(), g[9].exp()],
                rotation: [g[10], g[11], g[12], g[13]],
            }
        })
        .collect())
}

pub fn save_binary(path: impl AsRef<Path>, prims: &[GaussianPrimitive]) -> Result<()> {
    std::fs::write(path, write_binary(prims))?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Vec<GaussianPrimitive>> {
    read_binary(&std::fs::read(path)?)
}
