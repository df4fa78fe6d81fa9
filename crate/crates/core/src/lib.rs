//! Seed-point-driven generation of 3D Gaussian splats from a single image,
//! with drag-based geometric editing.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: a small reverse-mode autodiff graph plus transformer layers.
//! * [`geometry`]: point-cloud sampling, nearest neighbours, Chamfer/EMD and
//!   seed/anchor token alignment.
//! * [`render`]: a software Gaussian splatting rasterizer with analytic gradients.
//! * [`data`]: procedural objects, camera rigs and the image encoder.
//! * [`vae`]: the anchor-latent VAE (encoder, coarse-to-fine decoder, losses, training).
//! * [`flow`]: rectified-flow machinery, the seed generator and the seed-to-anchor mapper.
//! * [`edit`]: drag operations, mask blending and the edit pipeline.
//! * [`pipeline`]: the bundled models and the end-to-end generate loop.

pub mod data;
pub mod edit;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
