//! Training loop shared by the seed generator and the seed-anchor mapper.

use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::net::FlowNet;
use super::pairs::PairRecord;
use crate::error::StageExt;
use crate::io::checkpoint::Checkpoint;
use crate::nn::{sum_gradients, AdamW, AdamWConfig, Graph, Var};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// A flow model trainable on pair records.
pub trait FlowTask: Sized + Clone + Send + Sync {
    const KIND: &'static str;
    type Config: Clone + PartialEq + Serialize + DeserializeOwned + std::fmt::Debug + Send + Sync;

    fn build(cfg: &Self::Config, seed: u64) -> Result<Self>;
    fn net(&self) -> &FlowNet;
    fn net_mut(&mut self) -> &mut FlowNet;
    fn set_trained_steps(&mut self, steps: usize);
    fn check_record(&self, rec: &PairRecord) -> Result<()>;
    /// Matching loss of one record with freshly drawn time and noise.
    fn example_loss(&self, g: &mut Graph, rec: &PairRecord, rng: &mut Rng) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub optimizer: AdamWConfig,
    pub steps: usize,
    pub seed: u64,
    /// Loss samples per record and step.
    pub samples_per_record: usize,
    pub checkpoint_every: usize,
    /// Dataset manifest, resolved relative to the config file by the CLI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Frozen VAE checkpoint providing the pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae_checkpoint: Option<PathBuf>,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig {
                lr: 1e-3,
                min_lr: 1e-4,
                warmup_steps: 20,
                total_steps: 1000,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            steps: 1000,
            seed: 0,
            samples_per_record: 4,
            checkpoint_every: 0,
            manifest: None,
            vae_checkpoint: None,
        }
    }
}

impl FlowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.samples_per_record == 0 {
            return Err(Error::invalid("samples_per_record must be positive"));
        }
        Ok(())
    }
}

/// Model and training settings as stored in a flow checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRunConfig<C> {
    pub model: C,
    #[serde(default)]
    pub train: FlowTrainConfig,
}

pub struct FlowTrainer<T: FlowTask> {
    pub cfg: FlowRunConfig<T::Config>,
    pub model: T,
    pub opt: AdamW,
    pub step: usize,
    pub pairs: Vec<PairRecord>,
}

impl<T: FlowTask> FlowTrainer<T> {
    pub fn new(cfg: FlowRunConfig<T::Config>, pairs: Vec<PairRecord>) -> Result<Self> {
        cfg.train.validate()?;
        if pairs.is_empty() {
            return Err(Error::invalid("flow training needs at least one pair record"));
        }
        let model = T::build(&cfg.model, cfg.train.seed)?;
        for r in &pairs {
            model.check_record(r)?;
        }
        let opt = AdamW::new(cfg.train.optimizer.clone(), &model.net().params);
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
            pairs,
        })
    }

    pub fn resume(ck: &Checkpoint, pairs: Vec<PairRecord>) -> Result<Self> {
        ck.expect_kind(T::KIND)?;
        let mut t = Self::new(ck.config()?, pairs)?;
        ck.load_params(&mut t.model.net_mut().params)?;
        ck.load_optimizer(&mut t.opt)?;
        t.step = ck.step;
        t.model.set_trained_steps(ck.step);
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(T::KIND, &self.cfg, self.step, &self.model.net().params, Some(&self.opt))
    }

    fn record_loss(&self, i: usize, with_grads: bool, step: usize) -> Result<(f64, Vec<Option<Array2<f64>>>)> {
        let net = self.model.net();
        let mut r = rng::stream(self.cfg.train.seed, 0x2000 + i as u64, step as u64);
        let k = self.cfg.train.samples_per_record;
        let mut g = Graph::new();
        if !with_grads {
            g.freeze(&net.params);
        }
        let mut losses = Vec::with_capacity(k);
        for _ in 0..k {
            losses.push(self.model.example_loss(&mut g, &self.pairs[i], &mut r)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l);
        }
        let total = g.scale(total, 1.0 / k as f64);
        let value = g.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("flow loss on record {i}")));
        }
        let grads = if with_grads {
            g.backward(total)?.for_store(&net.params)
        } else {
            Vec::new()
        };
        Ok((value, grads))
    }

    /// One optimizer step over every record; returns the mean pre-update loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let results = (0..self.pairs.len())
            .into_par_iter()
            .map(|i| self.record_loss(i, true, self.step))
            .collect::<Result<Vec<_>>>()
            .stage("forward")?;
        let n = results.len() as f64;
        let (losses, grads): (Vec<f64>, Vec<_>) = results.into_iter().unzip();
        let grads = sum_gradients(grads, 1.0 / n);
        self.opt
            .update(&mut self.model.net_mut().params, &grads)
            .stage("update")?;
        self.step += 1;
        self.model.set_trained_steps(self.step);
        Ok(losses.iter().sum::<f64>() / n)
    }

    /// Mean loss on a fixed evaluation draw, independent of the step.
    pub fn evaluate(&self) -> Result<f64> {
        let losses = (0..self.pairs.len())
            .into_par_iter()
            .map(|i| self.record_loss(i, false, usize::MAX).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

pub fn flow_metrics_header() -> &'static str {
    "step,cfm"
}

pub fn write_flow_metrics_row(w: &mut impl Write, step: usize, loss: f64) -> Result<()> {
    writeln!(w, "{step},{loss:.10e}")?;
    Ok(())
}
