//! Image-conditioned seed-point generator: a flow from Gaussian noise directly
//! to raw seed coordinates.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::net::{FlowCond, FlowNet, FlowNetConfig};
use super::ode::{cfm_loss_var, interpolate_xt, sample_ode};
use super::pairs::PairRecord;
use super::train::FlowTask;
use crate::nn::{Graph, Var};
use crate::rng::{self, Rng};
use crate::vae::{points_array, rows3, VaeConfig};
use crate::{Error, Result};

pub const SEED_KIND: &str = "seed";

/// Half-width of the canonical scene box.
pub const BOX_HALF: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedGenConfig {
    pub seeds: usize,
    pub net: FlowNetConfig,
    pub sample_steps: usize,
}

impl Default for SeedGenConfig {
    fn default() -> Self {
        Self {
            seeds: 16,
            net: FlowNetConfig {
                token_dim: 3,
                context_dim: 32,
                ..FlowNetConfig::default()
            },
            sample_steps: 50,
        }
    }
}

impl SeedGenConfig {
    /// Default generator conditioned on the image tokens of `vae`.
    pub fn for_vae(vae: &VaeConfig) -> Self {
        let mut c = Self::default();
        c.net.context_dim = vae.image.token_dim;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.token_dim != 3 || self.net.token_slots != 0 || self.net.clustered() || self.net.aug_conditioning {
            return Err(Error::invalid("the seed generator flows plain 3D point sets"));
        }
        if self.seeds == 0 || self.sample_steps == 0 {
            return Err(Error::invalid("seed count and sampling steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SeedGenerator {
    pub cfg: SeedGenConfig,
    pub net: FlowNet,
    /// Optimizer steps the weights have seen; zero means untrained.
    pub trained_steps: usize,
}

impl SeedGenerator {
    pub fn new(cfg: SeedGenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = FlowNet::new(cfg.net.clone(), seed)?;
        Ok(Self {
            cfg,
            net,
            trained_steps: 0,
        })
    }

    /// Samples `S` seed points conditioned on image tokens, clamped to the
    /// canonical box.
    pub fn generate_seeds(&self, tokens: &Array2<f64>, steps: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
        if self.trained_steps == 0 {
            return Err(Error::Precondition("seed generator is untrained".into()));
        }
        let mut r = rng::stream(seed, 0x5eed, 0);
        let x0 = Array2::from_shape_vec((self.cfg.seeds, 3), rng::normal_vec(&mut r, self.cfg.seeds * 3)).unwrap();
        let field = |x: &Array2<f64>, t: f64| {
            let c = FlowCond {
                context: Some(tokens),
                ..FlowCond::at(t)
            };
            self.net.velocity(x, &c)
        };
        let x1 = sample_ode(&field, &x0, steps)?;
        Ok(rows3(&x1.mapv(|v| v.clamp(-BOX_HALF, BOX_HALF))))
    }
}

impl FlowTask for SeedGenerator {
    const KIND: &'static str = SEED_KIND;
    type Config = SeedGenConfig;

    fn build(cfg: &SeedGenConfig, seed: u64) -> Result<Self> {
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
        if rec.seed_index.len() != self.cfg.seeds {
            return Err(Error::invalid(format!(
                "pair record has {} seeds, generator makes {}",
                rec.seed_index.len(),
                self.cfg.seeds
            )));
        }
        Ok(())
    }

    fn example_loss(&self, g: &mut Graph, rec: &PairRecord, rng: &mut Rng) -> Result<Var> {
        let x1 = points_array(&rec.seeds());
        let x0 = Array2::from_shape_vec(x1.dim(), rng::normal_vec(rng, x1.len())).unwrap();
        let t: f64 = rand::Rng::random(rng);
        let xt = interpolate_xt(&x0, &x1, t)?;
        let xv = g.constant(xt);
        let c = FlowCond {
            context: Some(&rec.tokens),
            ..FlowCond::at(t)
        };
        let v = self.net.forward(g, xv, &c)?;
        cfm_loss_var(g, v, &x0, &x1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SeedGenConfig {
        SeedGenConfig {
            seeds: 16,
            net: FlowNetConfig {
                token_dim: 3,
                model_dim: 8,
                num_heads: 2,
                blocks: 2,
                cond_dim: 8,
                context_dim: 4,
                ..FlowNetConfig::default()
            },
            sample_steps: 5,
        }
    }

    #[test]
    fn untrained_generator_rejected() {
        let g = SeedGenerator::new(tiny(), 0).unwrap();
        let e = g.generate_seeds(&Array2::zeros((3, 4)), 5, 0).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn fixed_seed_is_deterministic_and_shaped() {
        let mut g = SeedGenerator::new(tiny(), 0).unwrap();
        g.trained_steps = 1;
        let tok = Array2::from_elem((3, 4), 0.5);
        let a = g.generate_seeds(&tok, 5, 9).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, g.generate_seeds(&tok, 5, 9).unwrap());
        assert_ne!(a, g.generate_seeds(&tok, 5, 10).unwrap());
        assert!(a.iter().flatten().all(|v| v.abs() <= BOX_HALF));
    }

    #[test]
    fn config_rejects_clustered_nets() {
        let mut c = tiny();
        c.net.down_blocks = 1;
        c.net.up_blocks = 0;
        assert!(c.validate().is_err());
        c = tiny();
        c.seeds = 0;
        assert!(c.validate().is_err());
    }
}
