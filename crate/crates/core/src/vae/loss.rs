use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::LossWeights;
use super::model::{rows3, DecodedVars, EncodedLatents};
use crate::geometry::{nearest_neighbors, transport_plan, EXACT_EMD_CAP};
use crate::nn::{CustomOp, Graph, Var};
use crate::render::{rasterize_var, Camera, RenderOptions, RenderedImage};
use crate::{Error, Result};

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Loss components of one object, unweighted except `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub chamfer: f64,
    pub emd: f64,
    pub kl: f64,
    pub psnr: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.mse + w.ssim * self.ssim + w.lpips * self.lpips + w.chamfer * self.chamfer + w.emd * self.emd + w.kl * self.kl
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.total += b.total / n;
            m.mse += b.mse / n;
            m.ssim += b.ssim / n;
            m.lpips += b.lpips / n;
            m.chamfer += b.chamfer / n;
            m.emd += b.emd / n;
            m.kl += b.kl / n;
            m.psnr += b.psnr / n;
        }
        m
    }
}

pub fn psnr(mse: f64) -> f64 {
    -10.0 * mse.max(1e-20).log10()
}

/// Mean over every fully covered `k×k` window of a row-major `h×w` plane.
fn box_valid(x: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut hs = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            hs[r * wo + c] = x[r * w + c..r * w + c + k].iter().sum();
        }
    }
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|dy| hs[(r + dy) * wo + c]).sum::<f64>() * inv;
        }
    }
    out
}

/// Adjoint of [`box_valid`].
fn box_adjoint(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut vs = vec![0.0; h * wo];
    for r in 0..ho {
        for c in 0..wo {
            for dy in 0..k {
                vs[(r + dy) * wo + c] += g[r * wo + c];
            }
        }
    }
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..wo {
            let v = vs[r * wo + c] * inv;
            for dx in 0..k {
                out[r * w + c + dx] += v;
            }
        }
    }
    out
}

struct SsimOp {
    target: Array2<f64>,
    height: usize,
    width: usize,
    win: usize,
}

/// Window statistics of one channel and the per-window SSIM with its partial
/// derivatives with respect to `E[x]`, `E[x²]` and `E[xy]`.
struct ChannelStats {
    ssim: Vec<f64>,
    d_mx: Vec<f64>,
    d_exx: Vec<f64>,
    d_exy: Vec<f64>,
}

impl SsimOp {
    fn channel(&self, pred: &Array2<f64>, ch: usize) -> (Vec<f64>, Vec<f64>, ChannelStats) {
        let (h, w, k) = (self.height, self.width, self.win);
        let x: Vec<f64> = pred.column(ch).to_vec();
        let y: Vec<f64> = self.target.column(ch).to_vec();
        let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = box_valid(&x, h, w, k);
        let my = box_valid(&y, h, w, k);
        let exx = box_valid(&sq(&x), h, w, k);
        let eyy = box_valid(&sq(&y), h, w, k);
        let exy = box_valid(&xy, h, w, k);
        let n = mx.len();
        let mut st = ChannelStats {
            ssim: vec![0.0; n],
            d_mx: vec![0.0; n],
            d_exx: vec![0.0; n],
            d_exy: vec![0.0; n],
        };
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let a = 2.0 * ux * uy + SSIM_C1;
            let b = 2.0 * (exy[i] - ux * uy) + SSIM_C2;
            let c = ux * ux + uy * uy + SSIM_C1;
            let d = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + SSIM_C2;
            let s = a * b / (c * d);
            st.ssim[i] = s;
            st.d_mx[i] = s * (2.0 * uy / a - 2.0 * uy / b - 2.0 * ux / c + 2.0 * ux / d);
            st.d_exx[i] = -s / d;
            st.d_exy[i] = 2.0 * s / b;
        }
        (x, y, st)
    }

    fn value(&self, pred: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for ch in 0..3 {
            let (.., st) = self.channel(pred, ch);
            total += st.ssim.iter().sum::<f64>();
            count += st.ssim.len();
        }
        1.0 - total / count as f64
    }
}

impl CustomOp for SsimOp {
    fn name(&self) -> &'static str {
        "ssim"
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Option<Array2<f64>>> {
        let pred = inputs[0];
        let (h, w, k) = (self.height, self.width, self.win);
        let count = (3 * (h - k + 1) * (w - k + 1)) as f64;
        let scale = -grad[[0, 0]] / count;
        let mut out = Array2::zeros(pred.dim());
        for ch in 0..3 {
            let (x, y, st) = self.channel(pred, ch);
            let g1 = box_adjoint(&st.d_mx, h, w, k);
            let g2 = box_adjoint(&st.d_exx, h, w, k);
            let g3 = box_adjoint(&st.d_exy, h, w, k);
            for p in 0..h * w {
                out[[p, ch]] = scale * (g1[p] + 2.0 * x[p] * g2[p] + y[p] * g3[p]);
            }
        }
        vec![Some(out)]
    }
}

/// `1 − mean SSIM` over a 7×7 uniform window (smaller for tiny images), per channel.
pub fn ssim_loss(g: &mut Graph, pred: Var, target: &Array2<f64>, height: usize, width: usize) -> Result<Var> {
    if g.shape(pred) != target.dim() || target.dim() != (height * width, 3) {
        return Err(Error::shape(format!("ssim inputs {:?} vs {:?}", g.shape(pred), target.dim())));
    }
    let op = SsimOp {
        target: target.clone(),
        height,
        width,
        win: SSIM_WINDOW.min(height).min(width),
    };
    let v = op.value(g.value(pred));
    Ok(g.custom(&[pred], Array2::from_elem((1, 1), v), Box::new(op)))
}

/// Symmetric Chamfer distance from a point variable to fixed targets.
pub fn chamfer_var(g: &mut Graph, a: Var, b: &[[f64; 3]]) -> Result<Var> {
    let av = rows3(g.value(a));
    if av.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty set"));
    }
    let ab = nearest_neighbors(&av, b);
    let ba = nearest_neighbors(b, &av);
    let bn = g.constant(Array2::from_shape_fn((av.len(), 3), |(i, k)| b[ab[i].0][k]));
    let d1 = g.sub(a, bn);
    let s1 = g.square(d1);
    let s1 = g.sum(s1);
    let t1 = g.scale(s1, 1.0 / av.len() as f64);
    let idx: Vec<usize> = ba.iter().map(|x| x.0).collect();
    let ag = g.gather_rows(a, &idx);
    let bc = g.constant(super::model::points_array(b));
    let d2 = g.sub(ag, bc);
    let s2 = g.square(d2);
    let s2 = g.sum(s2);
    let t2 = g.scale(s2, 1.0 / b.len() as f64);
    Ok(g.add(t1, t2))
}

/// Transport cost under the optimal (or entropic, above the exact cap) plan.
pub fn emd_var(g: &mut Graph, a: Var, b: &[[f64; 3]]) -> Result<Var> {
    let av = rows3(g.value(a));
    let plan = transport_plan(&av, b, EXACT_EMD_CAP)?;
    let is: Vec<usize> = plan.entries.iter().map(|e| e.0).collect();
    let n = is.len();
    let bj = g.constant(Array2::from_shape_fn((n, 3), |(r, k)| b[plan.entries[r].1][k]));
    let w = g.constant(Array2::from_shape_fn((n, 1), |(r, _)| plan.entries[r].2));
    let ag = g.gather_rows(a, &is);
    let d = g.sub(ag, bj);
    let sq = g.square(d);
    let d2 = g.sum_rows(sq);
    let wd = g.mul(d2, w);
    Ok(g.sum(wd))
}

/// `0.5 · mean(μ² + σ² − 1 − 2 log σ)` against a standard normal.
pub fn kl_var(g: &mut Graph, mu: Var, log_sigma: Var) -> Var {
    let m2 = g.square(mu);
    let l2 = g.scale(log_sigma, 2.0);
    let s2 = g.exp(l2);
    let a = g.add(m2, s2);
    let a = g.sub(a, l2);
    let a = g.add_scalar(a, -1.0);
    let m = g.mean(a);
    g.scale(m, 0.5)
}

pub fn kl_divergence(mu: &Array2<f64>, log_sigma: &Array2<f64>) -> f64 {
    let n = mu.len() as f64;
    mu.iter()
        .zip(log_sigma.iter())
        .map(|(&m, &l)| 0.5 * (m * m + (2.0 * l).exp() - 1.0 - 2.0 * l))
        .sum::<f64>()
        / n
}

/// Supervision for one object.
#[derive(Clone, Copy, Debug)]
pub struct VaeTargets<'a> {
    pub images: &'a [RenderedImage],
    pub cameras: &'a [Camera],
    /// Target for the reconstructed anchors.
    pub anchors: &'a [[f64; 3]],
    /// Target for the Gaussian centers.
    pub dense: &'a [[f64; 3]],
}

/// Full reconstruction loss; returns the total and its components.
pub fn vae_loss(
    g: &mut Graph,
    decoded: &DecodedVars,
    latents: &EncodedLatents,
    targets: &VaeTargets,
    weights: &LossWeights,
    opts: &RenderOptions,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    if targets.images.is_empty() || targets.images.len() != targets.cameras.len() {
        return Err(Error::invalid(format!(
            "{} target images for {} cameras",
            targets.images.len(),
            targets.cameras.len()
        )));
    }
    let v = targets.images.len() as f64;
    let mut mse_sum: Option<Var> = None;
    let mut ssim_sum: Option<Var> = None;
    let mut psnr_sum = 0.0;
    for (img, cam) in targets.images.iter().zip(targets.cameras) {
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::invalid("target image size differs from its camera"));
        }
        let pred = rasterize_var(g, decoded.splats, cam, opts)?;
        let t = g.constant(img.color.clone());
        let m = g.mse(pred, t);
        psnr_sum += psnr(g.scalar(m));
        mse_sum = Some(match mse_sum {
            Some(s) => g.add(s, m),
            None => m,
        });
        if weights.ssim > 0.0 {
            let s = ssim_loss(g, pred, &img.color, img.height, img.width)?;
            ssim_sum = Some(match ssim_sum {
                Some(a) => g.add(a, s),
                None => s,
            });
        }
    }
    let mse = g.scale(mse_sum.unwrap(), 1.0 / v);
    let cd_a = chamfer_var(g, decoded.anchors, targets.anchors)?;
    let cd_m = chamfer_var(g, decoded.centers, targets.dense)?;
    let cd = g.add(cd_a, cd_m);
    let emd_a = emd_var(g, decoded.anchors, targets.anchors)?;
    let emd_m = emd_var(g, decoded.centers, targets.dense)?;
    let emd = g.add(emd_a, emd_m);
    let kl = kl_var(g, latents.mu, latents.log_sigma);

    let mut total = mse;
    let mut parts = LossBreakdown {
        mse: g.scalar(mse),
        chamfer: g.scalar(cd),
        emd: g.scalar(emd),
        kl: g.scalar(kl),
        psnr: psnr_sum / v,
        ..LossBreakdown::default()
    };
    if let Some(s) = ssim_sum {
        let s = g.scale(s, 1.0 / v);
        parts.ssim = g.scalar(s);
        let ws = g.scale(s, weights.ssim);
        total = g.add(total, ws);
    }
    for (term, w) in [(cd, weights.chamfer), (emd, weights.emd), (kl, weights.kl)] {
        if w > 0.0 {
            let t = g.scale(term, w);
            total = g.add(total, t);
        }
    }
    parts.total = g.scalar(total);
    Ok((total, parts))
}
