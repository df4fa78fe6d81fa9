use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::shapes::{sample_surface, Shape, SyntheticObject};
use crate::render::{rasterize, Camera, GaussianPrimitive, RenderOptions, RenderedImage};
use crate::Result;

/// Micro-splats used to render ground truth.
pub const GT_SPLAT_COUNT: usize = 4000;
pub const GT_SPLAT_RADIUS: f64 = 0.03;
const GT_SAMPLE_SEED: u64 = 0x67_7473;

/// Cameras on a ring around the z axis, all looking at the origin. Views
/// alternate between `+elevation` and `−elevation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRig {
    pub views: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ViewRig {
    fn default() -> Self {
        Self {
            views: 8,
            radius: 2.5,
            elevation_deg: 20.0,
            fov_deg: 50.0,
            width: 64,
            height: 64,
        }
    }
}

impl ViewRig {
    pub fn camera(&self, view: usize) -> Result<Camera> {
        let az = 2.0 * PI * view as f64 / self.views.max(1) as f64;
        let el = if view % 2 == 0 { self.elevation_deg } else { -self.elevation_deg }.to_radians();
        let eye = [
            self.radius * el.cos() * az.cos(),
            self.radius * el.cos() * az.sin(),
            self.radius * el.sin(),
        ];
        Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], self.fov_deg, self.width, self.height)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        (0..self.views).map(|v| self.camera(v)).collect()
    }
}

/// Dense opaque micro-splats on the object surface.
pub fn ground_truth_splats(obj: &SyntheticObject) -> Result<Vec<GaussianPrimitive>> {
    if obj.shape == Shape::Empty {
        return Ok(Vec::new());
    }
    let (pts, colors) = sample_surface(obj, GT_SPLAT_COUNT, GT_SAMPLE_SEED)?;
    Ok(pts
        .iter()
        .zip(&colors)
        .map(|(&p, &c)| GaussianPrimitive::isotropic(p, GT_SPLAT_RADIUS, 1.0, c))
        .collect())
}

/// Renders every rig view of the object with the splat rasterizer.
pub fn render_ground_truth(obj: &SyntheticObject, rig: &ViewRig, opts: &RenderOptions) -> Result<Vec<RenderedImage>> {
    let splats = ground_truth_splats(obj)?;
    rig.cameras()?
        .iter()
        .map(|cam| rasterize(&splats, cam, opts))
        .collect()
}
