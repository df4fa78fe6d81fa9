//! Velocity networks.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::ClusterAssignment;
use crate::nn::params::uniform;
use crate::nn::{
    Graph, LayerNorm, Linear, ParamStore, SparseRows, TimestepEmbedder, TransformerBlock,
    TransformerBlockConfig, Var,
};
use crate::rng::{self, Rng};
use crate::{Error, Result};

const FREQ_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowNetConfig {
    /// Channels of the flowing tokens.
    pub token_dim: usize,
    /// Learned per-slot embedding over this many token slots; 0 disables it.
    pub token_slots: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub blocks: usize,
    /// Blocks before the cluster pooling and after the unpooling; the rest run
    /// on one token per cluster. Both 0 disables the cluster path.
    pub down_blocks: usize,
    pub up_blocks: usize,
    /// Width of the conditioning embedding.
    pub cond_dim: usize,
    /// Also embed the noise-augmentation level next to the flow time.
    pub aug_conditioning: bool,
    /// Image-token channels for cross-attention; 0 disables conditioning.
    pub context_dim: usize,
    pub ff_mult: usize,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        Self {
            token_dim: 3,
            token_slots: 0,
            model_dim: 64,
            num_heads: 4,
            blocks: 6,
            down_blocks: 0,
            up_blocks: 0,
            cond_dim: 64,
            aug_conditioning: false,
            context_dim: 0,
            ff_mult: 2,
        }
    }
}

impl FlowNetConfig {
    pub fn clustered(&self) -> bool {
        self.down_blocks + self.up_blocks > 0
    }

    pub fn validate(&self) -> Result<()> {
        TransformerBlockConfig::new(self.model_dim, self.num_heads).validate()?;
        if self.token_dim == 0 || self.cond_dim == 0 || self.ff_mult == 0 {
            return Err(Error::invalid("flow net dims must be positive"));
        }
        if self.blocks == 0 {
            return Err(Error::invalid("flow net needs at least one block"));
        }
        if self.clustered() && self.down_blocks + self.up_blocks >= self.blocks {
            return Err(Error::invalid(format!(
                "{} down + {} up blocks leave no pooled block out of {}",
                self.down_blocks, self.up_blocks, self.blocks
            )));
        }
        Ok(())
    }
}

/// Per-call inputs besides the tokens.
#[derive(Clone, Copy, Debug)]
pub struct FlowCond<'a> {
    pub t: f64,
    /// Noise-augmentation level as a fraction of the schedule.
    pub aug: f64,
    pub context: Option<&'a Array2<f64>>,
    pub clusters: Option<&'a ClusterAssignment>,
}

impl<'a> FlowCond<'a> {
    pub fn at(t: f64) -> Self {
        Self {
            t,
            aug: 0.0,
            context: None,
            clusters: None,
        }
    }
}

/// Transformer velocity field with adaLN time conditioning, optional
/// cross-attention to image tokens and optional cluster pooling.
///
/// The output layer starts at zero, so an untrained field is `v ≡ 0`.
#[derive(Clone, Debug)]
pub struct FlowNet {
    pub cfg: FlowNetConfig,
    pub params: ParamStore,
    input: Linear,
    slots: Option<crate::nn::ParamId>,
    embed: TimestepEmbedder,
    blocks: Vec<TransformerBlock>,
    skip: Option<Linear>,
    out_norm: LayerNorm,
    out: Linear,
}

impl FlowNet {
    pub fn new(cfg: FlowNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, 0xf10, 0);
        let mut p = ParamStore::new();
        let d = cfg.model_dim;
        let input = Linear::new(&mut p, &mut rng, "in", cfg.token_dim, d);
        let slots = (cfg.token_slots > 0).then(|| p.add("slots", uniform(&mut rng, cfg.token_slots, d, 0.02)));
        let inputs = if cfg.aug_conditioning { 2 } else { 1 };
        let embed = TimestepEmbedder::new(&mut p, &mut rng, "cond", FREQ_DIM, inputs, cfg.cond_dim);
        let block_cfg = TransformerBlockConfig {
            has_cross_attention: cfg.context_dim > 0,
            has_adaln: true,
            ff_mult: cfg.ff_mult,
            ..TransformerBlockConfig::new(d, cfg.num_heads)
        };
        let blocks = (0..cfg.blocks)
            .map(|l| TransformerBlock::new(&mut p, &mut rng, &format!("block{l}"), block_cfg, cfg.context_dim, cfg.cond_dim))
            .collect::<Result<Vec<_>>>()?;
        let skip = cfg.clustered().then(|| Linear::new(&mut p, &mut rng, "skip", 2 * d, d));
        let out_norm = LayerNorm::new(&mut p, "out_norm", d);
        let out = Linear::zeros(&mut p, "out", d, cfg.token_dim);
        Ok(Self {
            cfg,
            params: p,
            input,
            slots,
            embed,
            blocks,
            skip,
            out_norm,
            out,
        })
    }

    fn check(&self, g: &Graph, x: Var, c: &FlowCond) -> Result<()> {
        let (n, d) = g.shape(x);
        if d != self.cfg.token_dim {
            return Err(Error::shape(format!("flow tokens have {d} channels, expected {}", self.cfg.token_dim)));
        }
        if self.cfg.token_slots > 0 && n != self.cfg.token_slots {
            return Err(Error::shape(format!("{n} tokens for {} slots", self.cfg.token_slots)));
        }
        if !(0.0..=1.0).contains(&c.t) || !(0.0..=1.0).contains(&c.aug) {
            return Err(Error::invalid(format!("flow time {} / aug {} outside [0, 1]", c.t, c.aug)));
        }
        match (self.cfg.context_dim, c.context) {
            (0, None) => {}
            (0, Some(_)) => return Err(Error::invalid("unconditioned flow net given a context")),
            (_, None) => return Err(Error::invalid("flow net needs image tokens")),
            (k, Some(ctx)) if ctx.ncols() != k => {
                return Err(Error::shape(format!("image tokens have {} channels, expected {k}", ctx.ncols())))
            }
            _ => {}
        }
        match (self.cfg.clustered(), c.clusters) {
            (true, Some(a)) if a.anchor_count != n => Err(Error::shape(format!(
                "cluster assignment covers {} tokens, got {n}",
                a.anchor_count
            ))),
            (true, None) => Err(Error::invalid("clustered flow net needs an assignment")),
            _ => Ok(()),
        }
    }

    /// Velocity for token matrix `x`.
    pub fn forward(&self, g: &mut Graph, x: Var, c: &FlowCond) -> Result<Var> {
        self.check(g, x, c)?;
        let p = &self.params;
        let mut h = self.input.forward(g, p, x);
        if let Some(s) = self.slots {
            let s = g.param(p, s);
            h = g.add(h, s);
        }
        let scalars: Vec<f64> = if self.cfg.aug_conditioning { vec![c.t, c.aug] } else { vec![c.t] };
        let cond = self.embed.forward(g, p, &scalars);
        let ctx = c.context.map(|a| g.constant(a.clone()));
        if let (true, Some(a)) = (self.cfg.clustered(), c.clusters) {
            let (down, up) = (self.cfg.down_blocks, self.cfg.up_blocks);
            for b in &self.blocks[..down] {
                h = b.forward(g, p, h, ctx, Some(cond))?;
            }
            let fine = h;
            h = g.sparse_rows(h, Arc::new(pool_map(a)));
            for b in &self.blocks[down..self.cfg.blocks - up] {
                h = b.forward(g, p, h, ctx, Some(cond))?;
            }
            let coarse = g.gather_rows(h, &a.owner);
            let both = g.concat_cols(&[coarse, fine]);
            h = self.skip.as_ref().unwrap().forward(g, p, both);
            for b in &self.blocks[self.cfg.blocks - up..] {
                h = b.forward(g, p, h, ctx, Some(cond))?;
            }
        } else {
            for b in &self.blocks {
                h = b.forward(g, p, h, ctx, Some(cond))?;
            }
        }
        let h = self.out_norm.forward(g, p, h);
        Ok(self.out.forward(g, p, h))
    }

    /// Frozen evaluation.
    pub fn velocity(&self, x: &Array2<f64>, c: &FlowCond) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let xv = g.constant(x.clone());
        let v = self.forward(&mut g, xv, c)?;
        Ok(g.value(v).clone())
    }
}

/// Mean over each cluster's members; empty clusters pool to zero.
pub fn pool_map(a: &ClusterAssignment) -> SparseRows {
    let mut m = SparseRows::new(a.anchor_count);
    for members in &a.members {
        let w = 1.0 / members.len().max(1) as f64;
        m.push_row(members.iter().map(|&j| (j, w)));
    }
    m
}

/// Row-wise MLP field for low-dimensional samples: every row is an independent
/// sample with its own time.
#[derive(Clone, Debug)]
pub struct PointwiseFlowNet {
    pub dim: usize,
    pub hidden: usize,
    pub params: ParamStore,
    layers: Vec<Linear>,
}

impl PointwiseFlowNet {
    pub fn new(dim: usize, hidden: usize, depth: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 || depth == 0 {
            return Err(Error::invalid("pointwise flow net dims must be positive"));
        }
        let mut rng: Rng = rng::stream(seed, 0xf11, 0);
        let mut p = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = dim + FREQ_DIM;
        for l in 0..depth {
            layers.push(Linear::new(&mut p, &mut rng, &format!("l{l}"), width, hidden));
            width = hidden;
        }
        layers.push(Linear::zeros(&mut p, "out", hidden, dim));
        Ok(Self {
            dim,
            hidden,
            params: p,
            layers,
        })
    }

    /// Velocities for rows `x` at per-row times `t`.
    pub fn forward(&self, g: &mut Graph, x: Var, t: &[f64]) -> Result<Var> {
        let (n, d) = g.shape(x);
        if d != self.dim || t.len() != n {
            return Err(Error::shape(format!("pointwise field got {n}×{d} with {} times", t.len())));
        }
        let emb = Array2::from_shape_fn((n, FREQ_DIM), |(i, k)| TimestepEmbedder::sinusoid(t[i], FREQ_DIM)[k]);
        let e = g.constant(emb);
        let mut h = g.concat_cols(&[x, e]);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, &self.params, h);
            if i < last {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    pub fn velocity(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let xv = g.constant(x.clone());
        let v = self.forward(&mut g, xv, &vec![t; x.nrows()])?;
        Ok(g.value(v).clone())
    }
}
