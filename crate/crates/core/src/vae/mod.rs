//! The anchor-latent VAE: encoder, coarse-to-fine decoder, losses and training.

mod config;
mod loss;
mod model;
mod train;

#[cfg(test)]
pub(crate) mod tests_support;

pub use config::{LossWeights, VaeConfig};
pub use loss::{chamfer_var, emd_var, kl_divergence, kl_var, psnr, ssim_loss, vae_loss, LossBreakdown, VaeTargets};
pub use model::{interpolate_latents, reparameterize, AnchorVae, DecodedGaussians, DecodedVars, EncodedLatents};
pub use train::{metrics_header, object_loss, write_metrics_row, PreparedObject, VaeTrainConfig, VaeTrainer, VAE_KIND};
pub(crate) use model::{points_array, rows3};
