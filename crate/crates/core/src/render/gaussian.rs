use serde::{Deserialize, Serialize};

use super::camera::{quat_to_mat, Camera, Mat3};
use crate::{Error, Result};

/// Variance added to the projected covariance diagonal, in px².
pub const LOW_PASS: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;

/// One splat. `rotation` is a quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl GaussianPrimitive {
    /// Isotropic splat with identity rotation.
    pub fn isotropic(center: [f64; 3], radius: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            center,
            scale: [radius; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n2: f64 = self.rotation.iter().map(|x| x * x).sum();
        if (n2.sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("quaternion norm {} is not 1", n2.sqrt())));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("scale components must be positive"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid("opacity outside [0, 1]"));
        }
        let all = self
            .center
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(&self.color)
            .chain(std::iter::once(&self.opacity));
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gaussian primitive".into()));
        }
        Ok(())
    }

    /// Every field as raw bits, for content-based ordering.
    pub(crate) fn key(&self) -> [u64; 14] {
        let mut k = [0u64; 14];
        let vals = self
            .center
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity))
            .chain(&self.color);
        for (slot, v) in k.iter_mut().zip(vals) {
            *slot = v.to_bits();
        }
        k
    }
}

pub(crate) fn normalized_quat(r: [f64; 4]) -> Result<([f64; 4], f64)> {
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::invalid("zero quaternion"));
    }
    Ok((r.map(|x| x / n), n))
}

/// `Σ = R diag(s)² Rᵀ`; the quaternion is normalised first.
pub fn covariance_3d(s: [f64; 3], r: [f64; 4]) -> Result<Mat3> {
    let (q, _) = normalized_quat(r)?;
    let rm = quat_to_mat(q);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = rm[i][k] * s[k];
        }
    }
    Ok(mat_mul_t(&m, &m))
}

/// `a · bᵀ`
pub(crate) fn mat_mul_t(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[j][k]).sum();
        }
    }
    out
}

/// Screen-space footprint of a 3D Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub uv: [f64; 2],
    pub depth: f64,
    /// `J W Σ Wᵀ Jᵀ` before the low-pass term.
    pub cov_raw: [[f64; 2]; 2],
    /// `cov_raw` plus [`LOW_PASS`] on the diagonal.
    pub cov: [[f64; 2]; 2],
    /// Camera-space center.
    pub cam: [f64; 3],
    /// `J W`.
    pub t: [[f64; 3]; 2],
}

impl Projection {
    /// Inverse of `cov` as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f64; 3] {
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    /// Three-sigma radius of the larger principal axis.
    pub fn radius(&self) -> f64 {
        let [[a, b], [_, c]] = self.cov;
        let mid = 0.5 * (a + c);
        let disc = (mid * mid - (a * c - b * b)).max(0.0).sqrt();
        3.0 * (mid + disc).sqrt()
    }
}

/// Projects `Σ` at `μ`. `None` when the center is not beyond the near plane.
pub fn project_covariance(sigma: &Mat3, mu: [f64; 3], cam: &Camera) -> Option<Projection> {
    let p = cam.to_camera(mu);
    let d = -p[2];
    if d <= NEAR_PLANE {
        return None;
    }
    let j = [
        [cam.fx / d, 0.0, cam.fx * p[0] / (d * d)],
        [0.0, -cam.fy / d, -cam.fy * p[1] / (d * d)],
    ];
    let w = &cam.rotation;
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| t[r][k] * sigma[k][c]).sum();
        }
    }
    let mut cov_raw = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            cov_raw[r][c] = (0..3).map(|k| ts[r][k] * t[c][k]).sum();
        }
    }
    // exact symmetry regardless of summation order
    cov_raw[1][0] = cov_raw[0][1];
    let mut cov = cov_raw;
    cov[0][0] += LOW_PASS;
    cov[1][1] += LOW_PASS;
    Some(Projection {
        uv: [cam.cx + cam.fx * p[0] / d, cam.cy - cam.fy * p[1] / d],
        depth: d,
        cov_raw,
        cov,
        cam: p,
        t,
    })
}

/// Gradient of a loss with respect to one primitive's geometric inputs given
/// its gradient with respect to the projected mean and conic.
pub(crate) fn backprop_geometry(
    prim: &GaussianPrimitive,
    proj: &Projection,
    cam: &Camera,
    d_uv: [f64; 2],
    d_conic: [f64; 3],
) -> ([f64; 3], [f64; 3], [f64; 4]) {
    let conic = proj.conic();
    let x = [[conic[0], conic[1]], [conic[1], conic[2]]];
    // the off-diagonal conic entry appears twice in the quadratic form
    let gx = [[d_conic[0], 0.5 * d_conic[1]], [0.5 * d_conic[1], d_conic[2]]];
    // dL/dΣ' = −X G X
    let mut xg = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            xg[r][c] = (0..2).map(|k| x[r][k] * gx[k][c]).sum();
        }
    }
    let mut g2 = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            g2[r][c] = -(0..2).map(|k| xg[r][k] * x[k][c]).sum::<f64>();
        }
    }

    let sigma = covariance_3d(prim.scale, prim.rotation).expect("validated primitive");
    let t = &proj.t;
    // dL/dΣ = Tᵀ G' T
    let mut g3 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    s += t[a][i] * g2[a][b] * t[b][j];
                }
            }
            g3[i][j] = s;
        }
    }
    // dL/dT = 2 G' T Σ
    let mut gt = [[0.0; 3]; 2];
    for a in 0..2 {
        for j in 0..3 {
            let mut s = 0.0;
            for b in 0..2 {
                for k in 0..3 {
                    s += g2[a][b] * t[b][k] * sigma[k][j];
                }
            }
            gt[a][j] = 2.0 * s;
        }
    }
    // T = J W  ⇒  dL/dJ = dL/dT · Wᵀ
    let w = &cam.rotation;
    let mut gj = [[0.0; 3]; 2];
    for a in 0..2 {
        for k in 0..3 {
            gj[a][k] = (0..3).map(|c| gt[a][c] * w[k][c]).sum();
        }
    }

    let [px, py, pz] = proj.cam;
    let d = -pz;
    let (fx, fy) = (cam.fx, cam.fy);
    let d2 = d * d;
    let d3 = d2 * d;
    // derivatives w.r.t. camera-space p (note dd/dpz = −1)
    let mut gp = [0.0; 3];
    gp[0] += d_uv[0] * fx / d;
    gp[2] += d_uv[0] * fx * px / d2;
    gp[1] += d_uv[1] * (-fy / d);
    gp[2] += d_uv[1] * (-fy * py / d2);
    // J00 = fx/d, J02 = fx px/d², J11 = −fy/d, J12 = −fy py/d²
    gp[2] += gj[0][0] * fx / d2;
    gp[0] += gj[0][2] * fx / d2;
    gp[2] += gj[0][2] * 2.0 * fx * px / d3;
    gp[2] += gj[1][1] * (-fy / d2);
    gp[1] += gj[1][2] * (-fy / d2);
    gp[2] += gj[1][2] * (-2.0 * fy * py / d3);
    let mut d_center = [0.0; 3];
    for c in 0..3 {
        d_center[c] = (0..3).map(|k| w[k][c] * gp[k]).sum();
    }

    // Σ = M Mᵀ with M = R diag(s)
    let (q, qn) = normalized_quat(prim.rotation).expect("validated primitive");
    let rm = quat_to_mat(q);
    let s = prim.scale;
    let gs_sym = {
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] = 0.5 * (g3[i][j] + g3[j][i]);
            }
        }
        g
    };
    let mut gm = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            gm[i][k] = 2.0 * (0..3).map(|j| gs_sym[i][j] * rm[j][k] * s[k]).sum::<f64>();
        }
    }
    let mut d_scale = [0.0; 3];
    let mut gr = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            d_scale[k] += gm[i][k] * rm[i][k];
            gr[i][k] = gm[i][k] * s[k];
        }
    }
    let [qw, qx, qy, qz] = q;
    let dr = [
        [[0.0, -2.0 * qz, 2.0 * qy], [2.0 * qz, 0.0, -2.0 * qx], [-2.0 * qy, 2.0 * qx, 0.0]],
        [[0.0, 2.0 * qy, 2.0 * qz], [2.0 * qy, -4.0 * qx, -2.0 * qw], [2.0 * qz, 2.0 * qw, -4.0 * qx]],
        [[-4.0 * qy, 2.0 * qx, 2.0 * qw], [2.0 * qx, 0.0, 2.0 * qz], [-2.0 * qw, 2.0 * qz, -4.0 * qy]],
        [[-4.0 * qz, -2.0 * qw, 2.0 * qx], [2.0 * qw, -4.0 * qz, 2.0 * qy], [2.0 * qx, 2.0 * qy, 0.0]],
    ];
    let mut gq = [0.0; 4];
    for (c, m) in dr.iter().enumerate() {
        for i in 0..3 {
            for k in 0..3 {
                gq[c] += gr[i][k] * m[i][k];
            }
        }
    }
    let dot: f64 = (0..4).map(|c| gq[c] * q[c]).sum();
    let d_rot = [0, 1, 2, 3].map(|c| (gq[c] - q[c] * dot) / qn);
    (d_center, d_scale, d_rot)
}
