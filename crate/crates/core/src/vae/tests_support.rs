//! Tiny configurations shared by unit tests across modules.

use crate::data::{DatasetManifest, ImageEncoderConfig, ViewRig};
use crate::nn::AdamWConfig;
use crate::vae::{AnchorVae, PreparedObject, VaeConfig, VaeTrainConfig};

pub fn tiny_setup() -> (VaeTrainConfig, DatasetManifest) {
    let model = VaeConfig {
        anchors: 8,
        surface_points: 32,
        latent_dim: 4,
        gaussians_per_anchor: 2,
        coarse_layer: 1,
        decoder_layers: 2,
        interp_neighbors: 3,
        model_dim: 8,
        num_heads: 2,
        image: ImageEncoderConfig {
            image_size: 16,
            channels: [4, 4, 6],
            patch: 8,
            token_dim: 8,
        },
        ..VaeConfig::default()
    };
    let mut m = DatasetManifest::toy(1, 11);
    m.rig = ViewRig {
        views: 2,
        width: 16,
        height: 16,
        ..ViewRig::default()
    };
    m.surface_points = 32;
    m.dense_points = 16;
    let cfg = VaeTrainConfig {
        model,
        optimizer: AdamWConfig {
            lr: 5e-3,
            total_steps: 40,
            ..AdamWConfig::default()
        },
        steps: 40,
        seed: 3,
        ..VaeTrainConfig::default()
    };
    (cfg, m)
}

/// A seeded tiny VAE and two prepared objects.
pub fn tiny_objects() -> (AnchorVae, Vec<PreparedObject>) {
    let (cfg, mut m) = tiny_setup();
    m.objects = DatasetManifest::toy(2, 11).objects;
    let vae = AnchorVae::new(cfg.model.clone(), cfg.seed).unwrap();
    let objs = m
        .generate_all()
        .unwrap()
        .iter()
        .map(|s| PreparedObject::new(s, &cfg.model).unwrap())
        .collect();
    (vae, objs)
}
