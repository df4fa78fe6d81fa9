use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::gaussian::{backprop_geometry, covariance_3d, project_covariance, GaussianPrimitive, Projection};
use crate::{Error, Result};

const MIN_FALLOFF: f64 = 1.0 / 255.0;
const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Skip negligible contributions and stop at near-zero transmittance.
    /// Disable for exact gradient checks.
    pub cutoff: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [1.0; 3],
            cutoff: true,
        }
    }
}

/// Row-major color buffer, `(H·W) × 3`, plus accumulated opacity per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Array2<f64>,
    pub alpha: Vec<f64>,
}

impl RenderedImage {
    pub fn filled(width: usize, height: usize, c: [f64; 3]) -> Self {
        Self {
            width,
            height,
            color: Array2::from_shape_fn((width * height, 3), |(_, k)| c[k]),
            alpha: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = row * self.width + col;
        [self.color[[i, 0]], self.color[[i, 1]], self.color[[i, 2]]]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrimitiveGrads {
    pub center: Vec<[f64; 3]>,
    pub scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

struct Prepared {
    index: usize,
    proj: Projection,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    /// Inclusive pixel bounds `[x0, x1, y0, y1]`.
    bbox: [i64; 4],
}

fn prepare(prims: &[GaussianPrimitive], cam: &Camera) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(prims.len());
    for (index, p) in prims.iter().enumerate() {
        let fields = p.center.iter().chain(&p.scale).chain(&p.rotation).chain(&p.color);
        if fields.chain(std::iter::once(&p.opacity)).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("primitive {index}")));
        }
        let sigma = covariance_3d(p.scale, p.rotation)?;
        let Some(proj) = project_covariance(&sigma, p.center, cam) else {
            continue;
        };
        let r = proj.radius();
        let [u, v] = proj.uv;
        out.push(Prepared {
            index,
            conic: proj.conic(),
            proj,
            opacity: p.opacity,
            color: p.color,
            bbox: [
                (u - r - 0.5).floor() as i64,
                (u + r - 0.5).ceil() as i64,
                (v - r - 0.5).floor() as i64,
                (v + r - 0.5).ceil() as i64,
            ],
        });
    }
    // front to back; equal depths ordered by content so input order never matters
    out.sort_by(|a, b| match a.proj.depth.total_cmp(&b.proj.depth) {
        Ordering::Equal => prims[a.index].key().cmp(&prims[b.index].key()),
        o => o,
    });
    Ok(out)
}

/// Contribution of one primitive at one pixel: `(α̂, G, dx, dy)`.
#[inline]
fn falloff(p: &Prepared, x: usize, y: usize, cutoff: bool) -> Option<(f64, f64, f64, f64)> {
    if cutoff {
        let (xi, yi) = (x as i64, y as i64);
        if xi < p.bbox[0] || xi > p.bbox[1] || yi < p.bbox[2] || yi > p.bbox[3] {
            return None;
        }
    }
    let dx = x as f64 + 0.5 - p.proj.uv[0];
    let dy = y as f64 + 0.5 - p.proj.uv[1];
    let [a, b, c] = p.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let g = power.exp();
    if cutoff && g < MIN_FALLOFF {
        return None;
    }
    Some((p.opacity * g, g, dx, dy))
}

/// Slots of the primitives whose footprint can touch row `y`.
fn row_candidates(prep: &[Prepared], y: usize, cutoff: bool) -> Vec<usize> {
    (0..prep.len())
        .filter(|&s| !cutoff || (y as i64 >= prep[s].bbox[2] && y as i64 <= prep[s].bbox[3]))
        .collect()
}

const SPAN: usize = 8;

/// Row candidates whose footprint can touch columns `x0..x0 + SPAN`.
fn span_candidates(prep: &[Prepared], row: &[usize], x0: usize, cutoff: bool) -> Vec<usize> {
    let (lo, hi) = (x0 as i64, (x0 + SPAN - 1) as i64);
    row.iter()
        .copied()
        .filter(|&s| !cutoff || (prep[s].bbox[1] >= lo && prep[s].bbox[0] <= hi))
        .collect()
}

/// Depth-sorted front-to-back alpha blending of `prims` seen from `cam`.
pub fn rasterize(prims: &[GaussianPrimitive], cam: &Camera, opts: &RenderOptions) -> Result<RenderedImage> {
    cam.validate()?;
    let prep = prepare(prims, cam)?;
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let row = row_candidates(&prep, y, opts.cutoff);
            let mut cands = Vec::new();
            let mut colors = Vec::with_capacity(w);
            let mut alphas = Vec::with_capacity(w);
            for x in 0..w {
                if x % SPAN == 0 {
                    cands = span_candidates(&prep, &row, x, opts.cutoff);
                }
                let mut t = 1.0;
                let mut c = [0.0; 3];
                for &s in &cands {
                    let p = &prep[s];
                    let Some((ah, ..)) = falloff(p, x, y, opts.cutoff) else {
                        continue;
                    };
                    let wgt = t * ah;
                    for k in 0..3 {
                        c[k] += wgt * p.color[k];
                    }
                    t *= 1.0 - ah;
                    if opts.cutoff && t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                for k in 0..3 {
                    c[k] += t * opts.background[k];
                }
                colors.push(c);
                alphas.push(1.0 - t);
            }
            (colors, alphas)
        })
        .collect();
    let mut img = RenderedImage::filled(w, h, [0.0; 3]);
    for (y, (colors, alphas)) in rows.into_iter().enumerate() {
        for x in 0..w {
            let i = y * w + x;
            for k in 0..3 {
                img.color[[i, k]] = colors[x][k];
            }
            img.alpha[i] = alphas[x];
        }
    }
    Ok(img)
}

#[derive(Clone, Default)]
struct ScreenGrads {
    uv: Vec<[f64; 2]>,
    conic: Vec<[f64; 3]>,
    opacity: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl ScreenGrads {
    fn zeros(n: usize) -> Self {
        Self {
            uv: vec![[0.0; 2]; n],
            conic: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        }
    }
}

/// Gradients of `Σ_pixels ⟨grad_color, color⟩` with respect to every primitive field.
///
/// `grad_color` has the layout of [`RenderedImage::color`].
pub fn rasterize_backward(
    prims: &[GaussianPrimitive],
    cam: &Camera,
    opts: &RenderOptions,
    grad_color: &Array2<f64>,
) -> Result<PrimitiveGrads> {
    let (w, h) = (cam.width, cam.height);
    if grad_color.dim() != (w * h, 3) {
        return Err(Error::shape(format!(
            "image gradient {:?}, expected {:?}",
            grad_color.dim(),
            (w * h, 3)
        )));
    }
    let prep = prepare(prims, cam)?;
    let n = prep.len();
    let rows: Vec<ScreenGrads> = (0..h)
        .into_par_iter()
        .map(|y| {
            let row = row_candidates(&prep, y, opts.cutoff);
            let mut cands = Vec::new();
            let mut acc = ScreenGrads::zeros(n);
            let mut hits: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
            for x in 0..w {
                if x % SPAN == 0 {
                    cands = span_candidates(&prep, &row, x, opts.cutoff);
                }
                let gc = [
                    grad_color[[y * w + x, 0]],
                    grad_color[[y * w + x, 1]],
                    grad_color[[y * w + x, 2]],
                ];
                if gc == [0.0; 3] {
                    continue;
                }
                hits.clear();
                let mut t = 1.0;
                for &s in &cands {
                    let Some((ah, g, dx, dy)) = falloff(&prep[s], x, y, opts.cutoff) else {
                        continue;
                    };
                    hits.push((s, ah, g, dx, dy, t));
                    t *= 1.0 - ah;
                    if opts.cutoff && t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                // suffix color behind each hit, starting from the background
                let mut suffix = opts.background;
                for &(s, ah, g, dx, dy, ti) in hits.iter().rev() {
                    let p = &prep[s];
                    let mut d_ah = 0.0;
                    for k in 0..3 {
                        acc.color[s][k] += gc[k] * ti * ah;
                        d_ah += gc[k] * ti * (p.color[k] - suffix[k]);
                    }
                    for k in 0..3 {
                        suffix[k] = ah * p.color[k] + (1.0 - ah) * suffix[k];
                    }
                    acc.opacity[s] += d_ah * g;
                    let d_power = d_ah * ah;
                    let [a, b, c] = p.conic;
                    acc.uv[s][0] += d_power * (a * dx + b * dy);
                    acc.uv[s][1] += d_power * (b * dx + c * dy);
                    acc.conic[s][0] += d_power * (-0.5 * dx * dx);
                    acc.conic[s][1] += d_power * (-dx * dy);
                    acc.conic[s][2] += d_power * (-0.5 * dy * dy);
                }
            }
            acc
        })
        .collect();

    // fixed-order reduction keeps results independent of thread scheduling
    let mut total = ScreenGrads::zeros(n);
    for r in &rows {
        for s in 0..n {
            for k in 0..2 {
                total.uv[s][k] += r.uv[s][k];
            }
            for k in 0..3 {
                total.conic[s][k] += r.conic[s][k];
                total.color[s][k] += r.color[s][k];
            }
            total.opacity[s] += r.opacity[s];
        }
    }

    let m = prims.len();
    let mut out = PrimitiveGrads {
        center: vec![[0.0; 3]; m],
        scale: vec![[0.0; 3]; m],
        rotation: vec![[0.0; 4]; m],
        opacity: vec![0.0; m],
        color: vec![[0.0; 3]; m],
    };
    for (s, p) in prep.iter().enumerate() {
        let i = p.index;
        out.opacity[i] = total.opacity[s];
        out.color[i] = total.color[s];
        let (dc, ds, dr) = backprop_geometry(&prims[i], &p.proj, cam, total.uv[s], total.conic[s]);
        out.center[i] = dc;
        out.scale[i] = ds;
        out.rotation[i] = dr;
    }
    Ok(out)
}
