use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LossWeights, VaeConfig};
use super::loss::{vae_loss, LossBreakdown, VaeTargets};
use super::model::AnchorVae;
use crate::data::{DatasetManifest, ObjectSample};
use crate::error::StageExt;
use crate::geometry::farthest_point_sampling;
use crate::io::checkpoint::Checkpoint;
use crate::nn::{sum_gradients, AdamW, AdamWConfig, Graph};
use crate::render::{Camera, RenderOptions, RenderedImage};
use crate::{rng, Error, Result};

pub const VAE_KIND: &str = "vae";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub model: VaeConfig,
    pub loss: LossWeights,
    pub optimizer: AdamWConfig,
    pub steps: usize,
    pub seed: u64,
    /// Sample latents with the reparameterization during training.
    pub sample_latents: bool,
    /// Dataset manifest, resolved relative to the config file by the CLI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Write a checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            model: VaeConfig::default(),
            loss: LossWeights::default(),
            optimizer: AdamWConfig {
                lr: 2e-3,
                min_lr: 1e-4,
                warmup_steps: 20,
                total_steps: 1000,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            steps: 1000,
            seed: 0,
            sample_latents: true,
            manifest: None,
            checkpoint_every: 0,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

/// Per-object training inputs derived from a dataset sample.
#[derive(Clone, Debug)]
pub struct PreparedObject {
    pub anchors: Vec<[f64; 3]>,
    pub cloud: Vec<[f64; 3]>,
    pub dense: Vec<[f64; 3]>,
    pub images: Vec<RenderedImage>,
    pub cameras: Vec<Camera>,
    pub input_view: usize,
}

impl PreparedObject {
    pub fn new(sample: &ObjectSample, cfg: &VaeConfig) -> Result<Self> {
        if sample.cloud.len() != cfg.surface_points {
            return Err(Error::invalid(format!(
                "dataset cloud has {} points, model expects {}",
                sample.cloud.len(),
                cfg.surface_points
            )));
        }
        let need = cfg.gaussian_count();
        if sample.dense.len() < need {
            return Err(Error::invalid(format!(
                "dense cloud has {} points, need at least {need}",
                sample.dense.len()
            )));
        }
        if cfg.input_view >= sample.images.len() {
            return Err(Error::invalid(format!("input view {} of {}", cfg.input_view, sample.images.len())));
        }
        let idx = farthest_point_sampling(&sample.cloud, cfg.anchors, 0)?;
        Ok(Self {
            anchors: sample.cloud.select(&idx).into_inner(),
            cloud: sample.cloud.to_vec(),
            dense: sample.dense[..need].to_vec(),
            images: sample.images.clone(),
            cameras: sample.cameras.clone(),
            input_view: cfg.input_view,
        })
    }

    pub fn input(&self) -> (&RenderedImage, &Camera) {
        (&self.images[self.input_view], &self.cameras[self.input_view])
    }
}

/// Loss and parameter gradients for one object.
pub fn object_loss(
    model: &AnchorVae,
    obj: &PreparedObject,
    weights: &LossWeights,
    opts: &RenderOptions,
    noise: Option<&Array2<f64>>,
    with_grads: bool,
) -> Result<(LossBreakdown, Vec<Option<Array2<f64>>>)> {
    let mut g = Graph::new();
    if !with_grads {
        g.freeze(&model.params);
    }
    let (img, cam) = obj.input();
    let (lat, _) = model.encode(&mut g, &obj.anchors, &obj.cloud, img, cam, noise).stage("encode")?;
    let dec = model.decode(&mut g, lat.z).stage("decode")?;
    let targets = VaeTargets {
        images: &obj.images,
        cameras: &obj.cameras,
        anchors: &obj.anchors,
        dense: &obj.dense,
    };
    let (loss, parts) = vae_loss(&mut g, &dec, &lat, &targets, weights, opts).stage("loss")?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("loss components {parts:?}")));
    }
    let grads = if with_grads {
        g.backward(loss)?.for_store(&model.params)
    } else {
        Vec::new()
    };
    Ok((parts, grads))
}

pub struct VaeTrainer {
    pub cfg: VaeTrainConfig,
    pub model: AnchorVae,
    pub opt: AdamW,
    pub step: usize,
    pub objects: Vec<PreparedObject>,
    pub render: RenderOptions,
}

impl VaeTrainer {
    pub fn new(cfg: VaeTrainConfig, manifest: &DatasetManifest) -> Result<Self> {
        cfg.validate()?;
        let model = AnchorVae::new(cfg.model.clone(), cfg.seed)?;
        let opt = AdamW::new(cfg.optimizer.clone(), &model.params);
        let samples = manifest.generate_all().stage("dataset")?;
        let objects = samples
            .iter()
            .map(|s| PreparedObject::new(s, &cfg.model))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
            objects,
            render: manifest.render_options(),
        })
    }

    /// Continues from a checkpoint written by [`VaeTrainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, manifest: &DatasetManifest) -> Result<Self> {
        ck.expect_kind(VAE_KIND)?;
        let cfg: VaeTrainConfig = ck.config()?;
        let mut t = Self::new(cfg, manifest)?;
        ck.load_params(&mut t.model.params)?;
        ck.load_optimizer(&mut t.opt)?;
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(VAE_KIND, &self.cfg, self.step, &self.model.params, Some(&self.opt))
    }

    fn noise(&self, obj: usize) -> Option<Array2<f64>> {
        self.cfg.sample_latents.then(|| {
            let (n, d) = (self.cfg.model.anchors, self.cfg.model.latent_dim);
            let mut r = rng::stream(self.cfg.seed, 0x1000 + obj as u64, self.step as u64);
            Array2::from_shape_vec((n, d), rng::normal_vec(&mut r, n * d)).unwrap()
        })
    }

    /// One optimizer step over every object; returns the mean pre-update losses.
    /// On a non-finite loss or gradient the parameters are left untouched.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let noises: Vec<_> = (0..self.objects.len()).map(|i| self.noise(i)).collect();
        let results = self
            .objects
            .par_iter()
            .zip(noises.par_iter())
            .map(|(o, n)| object_loss(&self.model, o, &self.cfg.loss, &self.render, n.as_ref(), true))
            .collect::<Result<Vec<_>>>()
            .stage("forward")?;
        let (parts, grads): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let grads = sum_gradients(grads, 1.0 / self.objects.len() as f64);
        self.opt
            .update(&mut self.model.params, &grads)
            .stage("update")?;
        self.step += 1;
        Ok(LossBreakdown::mean(&parts))
    }

    /// Eval-mode losses (latent means) over every object.
    pub fn evaluate(&self) -> Result<LossBreakdown> {
        let parts = self
            .objects
            .par_iter()
            .map(|o| object_loss(&self.model, o, &self.cfg.loss, &self.render, None, false).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(LossBreakdown::mean(&parts))
    }
}

pub fn metrics_header() -> &'static str {
    "step,total,mse,ssim,lpips,chamfer,emd,kl,psnr"
}

pub fn write_metrics_row(w: &mut impl Write, step: usize, b: &LossBreakdown) -> Result<()> {
    writeln!(
        w,
        "{step},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.6}",
        b.total, b.mse, b.ssim, b.lpips, b.chamfer, b.emd, b.kl, b.psnr
    )?;
    Ok(())
}
