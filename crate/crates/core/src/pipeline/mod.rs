//! The bundled models and the image-to-splats generation loop.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::{FeatureMaps, ViewRig};
use crate::error::StageExt;
use crate::flow::{dimension_align, FlowRunConfig, MappedAnchors, MapperConfig, SeedAnchorMapper, SeedGenConfig, SeedGenerator, MAPPER_KIND, SEED_KIND};
use crate::io::checkpoint::Checkpoint;
use crate::io::container::Container;
use crate::render::{rasterize, Camera, GaussianPrimitive, RenderOptions, RenderedImage};
use crate::vae::{AnchorVae, DecodedGaussians, VaeConfig, VaeTrainConfig, VAE_KIND};
use crate::{Error, Result};

pub const BUNDLE_KIND: &str = "pipeline-bundle";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub vae: VaeConfig,
    pub seed: SeedGenConfig,
    pub mapper: MapperConfig,
    pub rig: ViewRig,
    pub background: [f64; 3],
    /// Euler steps for both flows.
    pub steps: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.seed.validate()?;
        self.mapper.validate()?;
        let v = &self.vae;
        let mut problems = Vec::new();
        if self.mapper.anchors != v.anchors {
            problems.push(format!("mapper anchors {} vs VAE anchors {}", self.mapper.anchors, v.anchors));
        }
        if self.mapper.net.token_dim != v.latent_dim {
            problems.push(format!("mapper token dim {} vs latent dim {}", self.mapper.net.token_dim, v.latent_dim));
        }
        if self.mapper.seeds != self.seed.seeds {
            problems.push(format!("mapper seeds {} vs generator seeds {}", self.mapper.seeds, self.seed.seeds));
        }
        for (who, dim) in [("seed generator", self.seed.net.context_dim), ("mapper", self.mapper.net.context_dim)] {
            if dim != v.image.token_dim {
                problems.push(format!("{who} context dim {dim} vs image token dim {}", v.image.token_dim));
            }
        }
        if self.rig.width != v.image.image_size || self.rig.height != v.image.image_size {
            problems.push(format!(
                "rig {}×{} vs encoder input {}",
                self.rig.width, self.rig.height, v.image.image_size
            ));
        }
        if v.input_view >= self.rig.views {
            problems.push(format!("input view {} of {}", v.input_view, self.rig.views));
        }
        if self.steps == 0 {
            problems.push("zero sampling steps".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent bundle: {}", problems.join("; "))))
        }
    }
}

/// Everything generated from one input image.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub maps: FeatureMaps,
    pub seeds: Vec<[f64; 3]>,
    pub z_seeds: Array2<f64>,
    /// Per-seed image features sampled at the original seed positions.
    pub features: Array2<f64>,
    pub mapped: MappedAnchors,
    pub decoded: DecodedGaussians,
}

/// The three trained models plus the camera rig they were trained with.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub vae: AnchorVae,
    pub seed_gen: SeedGenerator,
    pub mapper: SeedAnchorMapper,
    /// SHA-256 over configuration and weights.
    pub version: String,
}

impl Pipeline {
    pub fn from_parts(rig: ViewRig, background: [f64; 3], vae: AnchorVae, seed_gen: SeedGenerator, mapper: SeedAnchorMapper) -> Result<Self> {
        let cfg = PipelineConfig {
            vae: vae.cfg.clone(),
            seed: seed_gen.cfg.clone(),
            mapper: mapper.cfg.clone(),
            steps: seed_gen.cfg.sample_steps,
            rig,
            background,
        };
        cfg.validate()?;
        let mut p = Self {
            cfg,
            vae,
            seed_gen,
            mapper,
            version: String::new(),
        };
        p.version = p.weights_hash();
        Ok(p)
    }

    /// Assembles a bundle from the three training checkpoints.
    pub fn from_checkpoints(vae: &Checkpoint, seed: &Checkpoint, mapper: &Checkpoint, rig: ViewRig, background: [f64; 3]) -> Result<Self> {
        vae.expect_kind(VAE_KIND)?;
        seed.expect_kind(SEED_KIND)?;
        mapper.expect_kind(MAPPER_KIND)?;
        let vcfg: VaeTrainConfig = vae.config()?;
        let mut v = AnchorVae::new(vcfg.model, 0)?;
        vae.load_params(&mut v.params)?;
        let scfg: FlowRunConfig<SeedGenConfig> = seed.config()?;
        let mut s = SeedGenerator::new(scfg.model, 0)?;
        seed.load_params(&mut s.net.params)?;
        s.trained_steps = seed.step;
        let mcfg: FlowRunConfig<MapperConfig> = mapper.config()?;
        let mut m = SeedAnchorMapper::new(mcfg.model, 0)?;
        mapper.load_params(&mut m.net.params)?;
        m.trained_steps = mapper.step;
        Self::from_parts(rig, background, v, s, m)
    }

    fn container_without_hash(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": BUNDLE_KIND,
            "config": self.cfg,
            "trained_steps": { "seed": self.seed_gen.trained_steps, "mapper": self.mapper.trained_steps },
        }));
        c.tensors.extend(self.vae.params.to_tensors("vae."));
        c.tensors.extend(self.seed_gen.net.params.to_tensors("seed."));
        c.tensors.extend(self.mapper.net.params.to_tensors("mapper."));
        c
    }

    /// Recomputes the content hash from the current weights.
    pub fn weights_hash(&self) -> String {
        let c = self.container_without_hash();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c.header).expect("header serializes"));
        for t in &c.tensors {
            h.update(t.name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(&t.bytes);
        }
        hex::encode(h.finalize())
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.container_without_hash();
        c.header["version"] = json!(self.version);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.header["kind"] != BUNDLE_KIND {
            return Err(Error::Format(format!("not a pipeline bundle: {}", c.header["kind"])));
        }
        let cfg: PipelineConfig = serde_json::from_value(c.header["config"].clone())?;
        cfg.validate()?;
        let steps = |k: &str| -> Result<usize> {
            c.header["trained_steps"][k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("bundle lacks trained steps for {k}")))
        };
        let mut vae = AnchorVae::new(cfg.vae.clone(), 0)?;
        vae.params.load_tensors("vae.", &c.tensors)?;
        let mut seed_gen = SeedGenerator::new(cfg.seed.clone(), 0)?;
        seed_gen.net.params.load_tensors("seed.", &c.tensors)?;
        seed_gen.trained_steps = steps("seed")?;
        let mut mapper = SeedAnchorMapper::new(cfg.mapper.clone(), 0)?;
        mapper.net.params.load_tensors("mapper.", &c.tensors)?;
        mapper.trained_steps = steps("mapper")?;
        let mut p = Self {
            cfg,
            vae,
            seed_gen,
            mapper,
            version: String::new(),
        };
        p.version = p.weights_hash();
        if let Some(v) = c.header["version"].as_str() {
            if v != p.version {
                return Err(Error::Format(format!("bundle hash {v} does not match its contents {}", p.version)));
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.cfg.background,
            cutoff: true,
        }
    }

    /// Camera the input image is assumed to be taken from.
    pub fn input_camera(&self) -> Result<Camera> {
        self.cfg.rig.camera(self.cfg.vae.input_view)
    }

    /// Camera `view` of a ring with `count` views.
    pub fn view_camera(&self, view: usize, count: usize) -> Result<Camera> {
        if view >= count {
            return Err(Error::invalid(format!("view {view} of {count}")));
        }
        ViewRig {
            views: count,
            ..self.cfg.rig.clone()
        }
        .camera(view)
    }

    pub fn check_image(&self, img: &RenderedImage) -> Result<()> {
        let s = self.cfg.vae.image.image_size;
        if img.width != s || img.height != s {
            return Err(Error::invalid(format!("input image is {}×{}, expected {s}×{s}", img.width, img.height)));
        }
        Ok(())
    }

    /// Image → seeds → seed latents → anchor latents → Gaussians.
    pub fn generate(&self, image: &RenderedImage, seed: u64) -> Result<Generation> {
        self.check_image(image).stage("input")?;
        let cam = self.input_camera()?;
        let maps = self.vae.feature_maps(image).stage("features")?;
        let seeds = self
            .seed_gen
            .generate_seeds(&maps.tokens, self.cfg.steps, seed)
            .stage("seeds")?;
        let (z_seeds, features) = dimension_align(&self.vae, &seeds, &maps, &cam).stage("align")?;
        let (mapped, decoded) = self.map_and_decode(&z_seeds, &maps.tokens, seed)?;
        Ok(Generation {
            maps,
            seeds,
            z_seeds,
            features,
            mapped,
            decoded,
        })
    }

    /// Mapping flow from seed latents, then decoding.
    pub fn map_and_decode(&self, z_seeds: &Array2<f64>, tokens: &Array2<f64>, seed: u64) -> Result<(MappedAnchors, DecodedGaussians)> {
        let mapped = self
            .mapper
            .map_seeds_to_anchors(&self.vae, z_seeds, tokens, self.cfg.steps, seed)
            .stage("map")?;
        let decoded = self.vae.decode_values(&mapped.z).stage("decode")?;
        Ok((mapped, decoded))
    }

    /// Renders `views` evenly spaced ring views.
    pub fn render_views(&self, prims: &[GaussianPrimitive], views: usize) -> Result<Vec<RenderedImage>> {
        (0..views)
            .map(|v| rasterize(prims, &self.view_camera(v, views)?, &self.render_options()))
            .collect::<Result<Vec<_>>>()
            .stage("render")
    }
}
