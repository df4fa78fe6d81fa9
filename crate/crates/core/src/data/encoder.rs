use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::params::uniform;
use crate::nn::{bilinear_weights, Graph, Linear, ParamId, ParamStore, SparseRows, Var};
use crate::render::{Camera, RenderedImage, NEAR_PLANE};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEncoderConfig {
    pub image_size: usize,
    /// Output channels of the three stride-2 conv stages; the last is the
    /// feature-plane width.
    pub channels: [usize; 3],
    pub patch: usize,
    pub token_dim: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: [16, 32, 32],
            patch: 8,
            token_dim: 32,
        }
    }
}

impl ImageEncoderConfig {
    pub fn plane_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn num_tokens(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn plane_channels(&self) -> usize {
        self.channels[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::invalid("image size must be a positive multiple of 8"));
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(Error::invalid("patch size must divide the image size"));
        }
        Ok(())
    }
}

/// Feature plane `P_I` (`(h·w) × C`, row-major grid) and patch tokens `F_I`.
#[derive(Clone, Copy, Debug)]
pub struct ImageFeatures {
    pub plane: Var,
    pub plane_h: usize,
    pub plane_w: usize,
    /// Input pixels per plane cell.
    pub stride: f64,
    pub tokens: Var,
}

/// Continuous pixel coordinates of a point, or `None` behind the camera.
pub fn project_to_image(x: [f64; 3], cam: &Camera) -> Option<[f64; 2]> {
    cam.project(x, NEAR_PLANE).map(|(uv, _)| uv)
}

impl ImageFeatures {
    /// Bilinear sampler from the plane at each point's projection.
    pub fn sampler(&self, points: &[[f64; 3]], cam: &Camera) -> SparseRows {
        feature_sampler(points, cam, self.plane_h, self.plane_w, self.stride)
    }
}

/// Graph-free copy of [`ImageFeatures`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub plane: Array2<f64>,
    pub plane_h: usize,
    pub plane_w: usize,
    pub stride: f64,
    pub tokens: Array2<f64>,
}

impl FeatureMaps {
    pub fn from_graph(g: &Graph, f: &ImageFeatures) -> Self {
        Self {
            plane: g.value(f.plane).clone(),
            plane_h: f.plane_h,
            plane_w: f.plane_w,
            stride: f.stride,
            tokens: g.value(f.tokens).clone(),
        }
    }

    /// Per-point features; zero rows for points off-frame or behind the camera.
    pub fn sample(&self, points: &[[f64; 3]], cam: &Camera) -> Array2<f64> {
        feature_sampler(points, cam, self.plane_h, self.plane_w, self.stride).apply(&self.plane)
    }
}

/// Points that project behind the camera or outside the image get an empty row.
pub fn feature_sampler(points: &[[f64; 3]], cam: &Camera, plane_h: usize, plane_w: usize, stride: f64) -> SparseRows {
    let mut sp = SparseRows::new(plane_h * plane_w);
    for &p in points {
        match project_to_image(p, cam) {
            Some([u, v]) if u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64 => {
                let grid = [v / stride - 0.5, u / stride - 0.5];
                sp.push_row(bilinear_weights(plane_h, plane_w, grid));
            }
            _ => sp.push_row([]),
        }
    }
    sp
}

/// Three stride-2 3×3 conv stages for the plane, a linear patch embedding
/// plus learned positions for the tokens.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub cfg: ImageEncoderConfig,
    convs: Vec<Linear>,
    conv_maps: Vec<Arc<SparseRows>>,
    patch_map: Arc<SparseRows>,
    patch_embed: Linear,
    pos: ParamId,
}

/// im2col gather for a 3×3, stride-2, pad-1 conv: output rows are ordered
/// `[out_pixel][kernel_offset]`; padding taps are empty rows.
fn conv_map(size: usize) -> SparseRows {
    let out = size / 2;
    let mut sp = SparseRows::new(size * size);
    for oy in 0..out {
        for ox in 0..out {
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (2 * oy + ky) as i64 - 1;
                    let ix = (2 * ox + kx) as i64 - 1;
                    if iy < 0 || ix < 0 || iy >= size as i64 || ix >= size as i64 {
                        sp.push_row([]);
                    } else {
                        sp.push_row([(iy as usize * size + ix as usize, 1.0)]);
                    }
                }
            }
        }
    }
    sp
}

/// Patch-major pixel gather: rows ordered `[patch][pixel within patch]`.
fn patch_map(size: usize, patch: usize) -> SparseRows {
    let n = size / patch;
    let mut sp = SparseRows::new(size * size);
    for py in 0..n {
        for px in 0..n {
            for y in 0..patch {
                for x in 0..patch {
                    sp.push_row([((py * patch + y) * size + px * patch + x, 1.0)]);
                }
            }
        }
    }
    sp
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: ImageEncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut conv_maps = Vec::new();
        let mut cin = 3;
        let mut size = cfg.image_size;
        for (i, &cout) in cfg.channels.iter().enumerate() {
            convs.push(Linear::new(store, rng, &format!("{name}.conv{i}"), 9 * cin, cout));
            conv_maps.push(Arc::new(conv_map(size)));
            cin = cout;
            size /= 2;
        }
        let patch_embed = Linear::new(store, rng, &format!("{name}.patch"), 3 * cfg.patch * cfg.patch, cfg.token_dim);
        let pos = store.add(format!("{name}.pos"), uniform(rng, cfg.num_tokens(), cfg.token_dim, 0.02));
        Ok(Self {
            patch_map: Arc::new(patch_map(cfg.image_size, cfg.patch)),
            cfg,
            convs,
            conv_maps,
            patch_embed,
            pos,
        })
    }

    pub fn image_var(&self, g: &mut Graph, img: &RenderedImage) -> Result<Var> {
        if img.width != self.cfg.image_size || img.height != self.cfg.image_size {
            return Err(Error::shape(format!(
                "encoder expects {0}×{0} images, got {1}×{2}",
                self.cfg.image_size, img.width, img.height
            )));
        }
        Ok(g.constant(img.color.clone()))
    }

    /// Features of an image given as a `(H·W) × 3` variable.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, image: Var) -> Result<ImageFeatures> {
        let s = self.cfg.image_size;
        if g.shape(image) != (s * s, 3) {
            return Err(Error::shape(format!("image variable {:?}", g.shape(image))));
        }
        let mut x = image;
        let mut size = s;
        let mut cin = 3;
        for (conv, map) in self.convs.iter().zip(&self.conv_maps) {
            let cols = g.sparse_rows(x, map.clone());
            size /= 2;
            let cols = g.reshape(cols, size * size, 9 * cin);
            let y = conv.forward(g, p, cols);
            x = g.silu(y);
            cin = conv.out_dim;
        }
        let patches = g.sparse_rows(image, self.patch_map.clone());
        let n = self.cfg.num_tokens();
        let patches = g.reshape(patches, n, 3 * self.cfg.patch * self.cfg.patch);
        let tok = self.patch_embed.forward(g, p, patches);
        let pos = g.param(p, self.pos);
        let tokens = g.add(tok, pos);
        Ok(ImageFeatures {
            plane: x,
            plane_h: size,
            plane_w: size,
            stride: (s / size) as f64,
            tokens,
        })
    }

    pub fn encode(&self, g: &mut Graph, p: &ParamStore, img: &RenderedImage) -> Result<ImageFeatures> {
        let v = self.image_var(g, img)?;
        self.forward(g, p, v)
    }
}
