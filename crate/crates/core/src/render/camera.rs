use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Pinhole camera looking down its local −z axis, y up.
///
/// Pixel `(u, v)` has u growing right and v growing down; pixel centers sit at
/// half-integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Mat3,
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Camera {
    /// Camera at `eye` looking at `target`, vertical field of view in degrees.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let back = normalize([eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]]);
        let right = cross(up, back);
        if right.iter().map(|x| x * x).sum::<f64>() < 1e-18 {
            return Err(Error::invalid("camera up vector parallel to view direction"));
        }
        let right = normalize(right);
        let cam_up = cross(back, right);
        let rotation = [right, cam_up, back];
        let translation = [
            -(rotation[0][0] * eye[0] + rotation[0][1] * eye[1] + rotation[0][2] * eye[2]),
            -(rotation[1][0] * eye[0] + rotation[1][1] * eye[1] + rotation[1][2] * eye[2]),
            -(rotation[2][0] * eye[0] + rotation[2][1] * eye[1] + rotation[2][2] * eye[2]),
        ];
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self::new(rotation, translation, f, f, width, height)
    }

    /// Principal point at the image center.
    pub fn new(rotation: Mat3, translation: [f64; 3], fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("empty image"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                if (d - e).abs() > 1e-6 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Continuous pixel coordinates `(u, v)` and depth; `None` behind the near plane.
    pub fn project(&self, p: [f64; 3], near: f64) -> Option<([f64; 2], f64)> {
        let c = self.to_camera(p);
        let d = -c[2];
        if d <= near {
            return None;
        }
        Some((
            [self.cx + self.fx * c[0] / d, self.cy - self.fy * c[1] / d],
            d,
        ))
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}
