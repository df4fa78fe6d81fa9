//! Seed-to-anchor mapping: a flow from cluster-aligned seed latents to anchor
//! latents, conditioned on image tokens and the augmentation level.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{FlowCond, FlowNet, FlowNetConfig};
use super::ode::{cfm_loss_var, interpolate_xt, sample_ode, NoiseAugSchedule};
use super::pairs::PairRecord;
use super::train::FlowTask;
use crate::geometry::{repeat_align, ClusterAssignment};
use crate::nn::{Graph, Var};
use crate::rng::{self, Rng};
use crate::vae::{AnchorVae, VaeConfig};
use crate::{Error, Result};

pub const MAPPER_KIND: &str = "mapper";

/// How anchor tokens are paired with seed tokens during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Each anchor takes its nearest seed's latent.
    #[default]
    Cluster,
    /// Control: cluster sizes kept, membership shuffled at random.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    pub anchors: usize,
    pub seeds: usize,
    pub net: FlowNetConfig,
    pub aug: NoiseAugSchedule,
    pub sample_steps: usize,
    pub alignment: Alignment,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self::for_vae(&VaeConfig::default(), 16)
    }
}

impl MapperConfig {
    pub fn for_vae(vae: &VaeConfig, seeds: usize) -> Self {
        Self {
            anchors: vae.anchors,
            seeds,
            net: FlowNetConfig {
                token_dim: vae.latent_dim,
                token_slots: vae.anchors,
                down_blocks: 1,
                up_blocks: 1,
                aug_conditioning: true,
                context_dim: vae.image.token_dim,
                ..FlowNetConfig::default()
            },
            aug: NoiseAugSchedule::default(),
            sample_steps: 50,
            alignment: Alignment::Cluster,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.aug.validate()?;
        if self.seeds == 0 || self.seeds > self.anchors {
            return Err(Error::invalid(format!("{} seeds for {} anchors", self.seeds, self.anchors)));
        }
        if !self.net.clustered() || !self.net.aug_conditioning || self.net.token_slots != self.anchors {
            return Err(Error::invalid(
                "the mapper net needs cluster pooling, aug conditioning and one slot per anchor",
            ));
        }
        if self.sample_steps == 0 {
            return Err(Error::invalid("sampling steps must be positive"));
        }
        Ok(())
    }
}

/// Output of the mapping flow.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedAnchors {
    /// Aligned start tokens before augmentation.
    pub aligned: Array2<f64>,
    /// Start tokens after augmentation.
    pub start: Array2<f64>,
    /// Anchor latents `Z`.
    pub z: Array2<f64>,
    /// Anchor positions decoded from `Z`.
    pub anchors: Vec<[f64; 3]>,
    pub assignment: ClusterAssignment,
}

/// Repeats seed latents over the clusters and augments the result.
pub fn aligned_start(
    z_seeds: &Array2<f64>,
    assignment: &ClusterAssignment,
    aug: &NoiseAugSchedule,
    aug_step: usize,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (aligned, _) = repeat_align(z_seeds, assignment)?;
    let start = aug.augment(&aligned, aug_step, rng)?;
    Ok((aligned, start))
}

#[derive(Clone, Debug)]
pub struct SeedAnchorMapper {
    pub cfg: MapperConfig,
    pub net: FlowNet,
    pub trained_steps: usize,
}

impl SeedAnchorMapper {
    pub fn new(cfg: MapperConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = FlowNet::new(cfg.net.clone(), seed)?;
        Ok(Self {
            cfg,
            net,
            trained_steps: 0,
        })
    }

    /// Inference clusters: a uniform budget of `N/S` slots per seed.
    pub fn inference_assignment(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::uniform(self.cfg.seeds, self.cfg.anchors)
    }

    /// Integrates the mapping flow from aligned, augmented seed latents.
    pub fn map_seeds_to_anchors(
        &self,
        vae: &AnchorVae,
        z_seeds: &Array2<f64>,
        tokens: &Array2<f64>,
        steps: usize,
        seed: u64,
    ) -> Result<MappedAnchors> {
        if self.trained_steps == 0 {
            return Err(Error::Precondition("seed-anchor mapper is untrained".into()));
        }
        let s = z_seeds.nrows();
        if s > self.cfg.anchors {
            return Err(Error::invalid(format!("{s} seeds exceed {} anchors", self.cfg.anchors)));
        }
        if s != self.cfg.seeds {
            return Err(Error::shape(format!("{s} seed latents, mapper expects {}", self.cfg.seeds)));
        }
        let assignment = self.inference_assignment()?;
        let aug = &self.cfg.aug;
        let mut r = rng::stream(seed, 0xa06, 0);
        let (aligned, start) = aligned_start(z_seeds, &assignment, aug, aug.eval_step, &mut r)?;
        let field = |x: &Array2<f64>, t: f64| {
            let c = FlowCond {
                t,
                aug: aug.fraction(aug.eval_step),
                context: Some(tokens),
                clusters: Some(&assignment),
            };
            self.net.velocity(x, &c)
        };
        let z = sample_ode(&field, &start, steps)?;
        let decoded = vae.decode_values(&z)?;
        Ok(MappedAnchors {
            aligned,
            start,
            z,
            anchors: decoded.anchors.clone(),
            assignment,
        })
    }

    /// Training-time assignment of a record under the configured alignment.
    pub fn training_assignment(&self, rec: &PairRecord, rng: &mut Rng) -> Result<ClusterAssignment> {
        let mut owner = rec.owner.clone();
        if self.cfg.alignment == Alignment::Shuffled {
            owner.shuffle(rng);
        }
        ClusterAssignment::from_owner(rec.seed_index.len(), owner)
    }
}

impl FlowTask for SeedAnchorMapper {
    const KIND: &'static str = MAPPER_KIND;
    type Config = MapperConfig;

    fn build(cfg: &MapperConfig, seed: u64) -> Result<Self> {
        Self::new(cfg.clone(), seed)
    }

    fn net(&self) -> &FlowNet {
        &self.net
    }

    fn net_mut(&mut self) -> &mut FlowNet {
        &mut self.net
    }

    fn set_trained_steps(&mut self, steps: usize) {
        self.trained_steps = steps;
    }

    fn check_record(&self, rec: &PairRecord) -> Result<()> {
        if rec.z.dim() != (self.cfg.anchors, self.cfg.net.token_dim) || rec.seed_index.len() != self.cfg.seeds {
            return Err(Error::invalid(format!(
                "pair record {:?} latents with {} seeds, mapper expects ({}, {}) with {}",
                rec.z.dim(),
                rec.seed_index.len(),
                self.cfg.anchors,
                self.cfg.net.token_dim,
                self.cfg.seeds
            )));
        }
        Ok(())
    }

    fn example_loss(&self, g: &mut Graph, rec: &PairRecord, rng: &mut Rng) -> Result<Var> {
        let assignment = self.training_assignment(rec, rng)?;
        let aug = &self.cfg.aug;
        let aug_step = rand::Rng::random_range(rng, 0..=aug.num_steps);
        let (_, x0) = aligned_start(&rec.z_seeds, &assignment, aug, aug_step, rng)?;
        let t: f64 = rand::Rng::random(rng);
        let xt = interpolate_xt(&x0, &rec.z, t)?;
        let xv = g.constant(xt);
        let c = FlowCond {
            t,
            aug: aug.fraction(aug_step),
            context: Some(&rec.tokens),
            clusters: Some(&assignment),
        };
        let v = self.net.forward(g, xv, &c)?;
        cfm_loss_var(g, v, &x0, &rec.z)
    }
}
