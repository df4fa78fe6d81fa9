use serde::{Deserialize, Serialize};

use crate::data::ImageEncoderConfig;
use crate::nn::PositionalEncodingConfig;
use crate::{Error, Result};

/// Model dimensions of the anchor VAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Anchor count `N`.
    pub anchors: usize,
    /// Surface cloud size `M`.
    pub surface_points: usize,
    /// Latent width `d`.
    pub latent_dim: usize,
    /// Gaussians per anchor `m`.
    pub gaussians_per_anchor: usize,
    /// Decoder layer whose output feeds the coarse position head (1-based).
    pub coarse_layer: usize,
    pub decoder_layers: usize,
    /// Neighbours used to interpolate per-Gaussian attribute latents.
    pub interp_neighbors: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub posenc: PositionalEncodingConfig,
    pub image: ImageEncoderConfig,
    /// Per-axis bound on Gaussian offsets from their anchor.
    pub offset_bound: f64,
    /// Upper bound on Gaussian scales.
    pub max_scale: f64,
    /// Rig view used as the conditioning image.
    pub input_view: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            anchors: 64,
            surface_points: 256,
            latent_dim: 8,
            gaussians_per_anchor: 8,
            coarse_layer: 2,
            decoder_layers: 8,
            interp_neighbors: 8,
            model_dim: 64,
            num_heads: 4,
            posenc: PositionalEncodingConfig::default(),
            image: ImageEncoderConfig::default(),
            offset_bound: 0.3,
            max_scale: 0.2,
            input_view: 0,
        }
    }
}

impl VaeConfig {
    pub fn gaussian_count(&self) -> usize {
        self.anchors * self.gaussians_per_anchor
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.anchors == 0 || self.latent_dim == 0 || self.gaussians_per_anchor == 0 {
            return fail("anchors, latent_dim and gaussians_per_anchor must be positive".into());
        }
        if self.anchors > self.surface_points {
            return fail(format!(
                "{} anchors cannot be drawn from {} surface points",
                self.anchors, self.surface_points
            ));
        }
        if self.coarse_layer == 0 || self.coarse_layer > self.decoder_layers {
            return fail(format!(
                "coarse layer {} outside 1..={}",
                self.coarse_layer, self.decoder_layers
            ));
        }
        if self.interp_neighbors == 0 {
            return fail("interp_neighbors must be positive".into());
        }
        if !(self.offset_bound > 0.0 && self.max_scale > 0.0) {
            return fail("offset_bound and max_scale must be positive".into());
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return fail(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.num_heads
            ));
        }
        self.image.validate()
    }
}

/// Weights of the reconstruction loss terms; the MSE term has weight 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub ssim: f64,
    pub lpips: f64,
    pub chamfer: f64,
    pub emd: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 1.0,
            lpips: 0.0,
            chamfer: 1.0,
            emd: 1.0,
            kl: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.ssim, self.lpips, self.chamfer, self.emd, self.kl];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}
