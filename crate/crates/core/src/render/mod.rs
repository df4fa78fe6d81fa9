//! Software Gaussian splatting: covariance construction, projection, depth
//! sorted alpha blending and the matching backward pass.

mod camera;
mod gaussian;
mod op;
mod raster;

pub use camera::{quat_mul, quat_to_mat, Camera, Mat3};
pub use gaussian::{covariance_3d, project_covariance, GaussianPrimitive, Projection, LOW_PASS, NEAR_PLANE};
pub use op::{rasterize_var, SplatVars};
pub use raster::{rasterize, rasterize_backward, PrimitiveGrads, RenderOptions, RenderedImage};
