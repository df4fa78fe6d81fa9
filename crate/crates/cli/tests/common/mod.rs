//! Tiny models and data shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use seedsplat::data::{DatasetManifest, ImageEncoderConfig, ViewRig};
use seedsplat::flow::{FlowRunConfig, FlowTrainConfig, MapperConfig, SeedAnchorMapper, SeedGenConfig, SeedGenerator};
use seedsplat::io::image;
use seedsplat::nn::AdamWConfig;
use seedsplat::pipeline::Pipeline;
use seedsplat::rng;
use seedsplat::vae::{AnchorVae, VaeConfig, VaeTrainConfig};

pub const SEEDS: usize = 3;

pub fn tiny_vae_config() -> VaeConfig {
    VaeConfig {
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
    }
}

pub fn tiny_rig() -> ViewRig {
    ViewRig {
        views: 2,
        width: 16,
        height: 16,
        ..ViewRig::default()
    }
}

pub fn tiny_manifest(objects: usize) -> DatasetManifest {
    let mut m = DatasetManifest::toy(objects, 11);
    m.rig = tiny_rig();
    m.surface_points = 32;
    m.dense_points = 16;
    m
}

pub fn tiny_seed_config(vae: &VaeConfig) -> SeedGenConfig {
    let mut s = SeedGenConfig::for_vae(vae);
    s.seeds = SEEDS;
    s.net.model_dim = 8;
    s.net.num_heads = 2;
    s.net.blocks = 2;
    s.net.cond_dim = 8;
    s.sample_steps = 4;
    s
}

pub fn tiny_mapper_config(vae: &VaeConfig) -> MapperConfig {
    let mut m = MapperConfig::for_vae(vae, SEEDS);
    m.net.model_dim = 8;
    m.net.num_heads = 2;
    m.net.blocks = 3;
    m.net.cond_dim = 8;
    m.sample_steps = 4;
    m
}

pub fn tiny_vae_train(steps: usize) -> VaeTrainConfig {
    VaeTrainConfig {
        model: tiny_vae_config(),
        optimizer: AdamWConfig {
            lr: 5e-3,
            total_steps: steps,
            ..AdamWConfig::default()
        },
        steps,
        seed: 3,
        ..VaeTrainConfig::default()
    }
}

pub fn tiny_flow_train(steps: usize) -> FlowTrainConfig {
    FlowTrainConfig {
        optimizer: AdamWConfig {
            lr: 3e-3,
            total_steps: steps,
            warmup_steps: 0,
            ..AdamWConfig::default()
        },
        steps,
        seed: 1,
        samples_per_record: 2,
        ..FlowTrainConfig::default()
    }
}

pub fn write_json(path: &Path, v: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

pub fn seed_run(steps: usize) -> FlowRunConfig<SeedGenConfig> {
    FlowRunConfig {
        model: tiny_seed_config(&tiny_vae_config()),
        train: tiny_flow_train(steps),
    }
}

pub fn mapper_run(steps: usize) -> FlowRunConfig<MapperConfig> {
    FlowRunConfig {
        model: tiny_mapper_config(&tiny_vae_config()),
        train: tiny_flow_train(steps),
    }
}

/// An untrained-but-perturbed bundle, so every stage does real work.
pub fn tiny_pipeline() -> Pipeline {
    let cfg = tiny_vae_config();
    let vae = AnchorVae::new(cfg.clone(), 3).unwrap();
    let mut sg = SeedGenerator::new(tiny_seed_config(&cfg), 1).unwrap();
    let mut mp = SeedAnchorMapper::new(tiny_mapper_config(&cfg), 2).unwrap();
    let mut r = rng::stream(9, 0, 0);
    for v in sg.net.params.values_mut().iter_mut().chain(mp.net.params.values_mut()) {
        v.mapv_inplace(|e| e + 0.05 * rng::normal(&mut r));
    }
    sg.trained_steps = 1;
    mp.trained_steps = 1;
    Pipeline::from_parts(tiny_rig(), [1.0; 3], vae, sg, mp).unwrap()
}

/// PNG of the input view of the first tiny object.
pub fn input_png() -> Vec<u8> {
    let s = tiny_manifest(1).generate(0).unwrap();
    image::encode_png(&s.images[0]).unwrap()
}
