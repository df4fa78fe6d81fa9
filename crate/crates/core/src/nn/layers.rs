//! Linear layers, attention and the pre-norm transformer block.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{glorot, ParamId, ParamStore};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerBlockConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub has_cross_attention: bool,
    pub has_adaln: bool,
    /// Feed-forward width as a multiple of `model_dim`.
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

fn default_ff_mult() -> usize {
    4
}

impl TransformerBlockConfig {
    pub fn new(model_dim: usize, num_heads: usize) -> Self {
        Self {
            model_dim,
            num_heads,
            has_cross_attention: false,
            has_adaln: false,
            ff_mult: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 {
            return Err(Error::invalid("num_heads must be at least 1"));
        }
        if self.model_dim == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, in_dim, out_dim));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    pub fn no_bias(store: &mut ParamStore, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, in_dim, out_dim));
        Self {
            w,
            b: None,
            in_dim,
            out_dim,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), Array2::zeros((in_dim, out_dim)));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self {
            w,
            b: Some(b),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let w = g.param(p, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(p, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Layer norm with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, dim))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

/// Canonical visiting order for context rows: lexicographic on values.
///
/// Attention sums over context rows; visiting them in an order that depends
/// only on their contents makes the output a function of the context *set*.
pub fn canonical_row_order(a: &Array2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| {
        for (x, y) in a.row(i).iter().zip(a.row(j).iter()) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        i.cmp(&j)
    });
    order
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        ctx_dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), ctx_dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), ctx_dim, dim),
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    /// Multi-head `softmax(QKᵀ/√d_head) V`, queries from `x`, keys/values from `ctx`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, ctx: Var) -> Var {
        let order = canonical_row_order(g.value(ctx));
        let ctx = if order.iter().enumerate().all(|(i, &j)| i == j) {
            ctx
        } else {
            g.gather_rows(ctx, &order)
        };
        let q = self.q.forward(g, p, x);
        let k = self.k.forward(g, p, ctx);
        let v = self.v.forward(g, p, ctx);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, (h + 1) * dh),
                    g.slice_cols(k, h * dh, (h + 1) * dh),
                    g.slice_cols(v, h * dh, (h + 1) * dh),
                )
            };
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        self.o.forward(g, p, cat)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, p, x);
        let h = g.silu(h);
        self.down.forward(g, p, h)
    }
}

/// Sinusoidal embedding of one or more scalars followed by a two-layer MLP.
#[derive(Clone, Debug)]
pub struct TimestepEmbedder {
    pub freq_dim: usize,
    pub inputs: usize,
    pub l1: Linear,
    pub l2: Linear,
}

impl TimestepEmbedder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        freq_dim: usize,
        inputs: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            freq_dim,
            inputs,
            l1: Linear::new(store, rng, &format!("{name}.l1"), freq_dim * inputs, out_dim),
            l2: Linear::new(store, rng, &format!("{name}.l2"), out_dim, out_dim),
        }
    }

    /// `[cos(1000 s ω_k), sin(1000 s ω_k)]` with `ω_k = 10000^(-k/half)`.
    pub fn sinusoid(s: f64, freq_dim: usize) -> Vec<f64> {
        let half = freq_dim / 2;
        let mut v = vec![0.0; freq_dim];
        for k in 0..half {
            let w = (-(10000f64).ln() * k as f64 / half as f64).exp();
            let a = 1000.0 * s * w;
            v[k] = a.cos();
            v[half + k] = a.sin();
        }
        v
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, scalars: &[f64]) -> Var {
        assert_eq!(scalars.len(), self.inputs, "timestep embedder input count");
        let mut feats = Vec::with_capacity(self.freq_dim * self.inputs);
        for &s in scalars {
            feats.extend(Self::sinusoid(s, self.freq_dim));
        }
        let x = g.constant(Array2::from_shape_vec((1, feats.len()), feats).unwrap());
        let h = self.l1.forward(g, p, x);
        let h = g.silu(h);
        self.l2.forward(g, p, h)
    }
}

/// Layer norm whose scale and shift come from a timestep embedding.
///
/// The modulation layer starts at zero, so an untrained module is a plain
/// layer norm.
#[derive(Clone, Debug)]
pub struct AdaLn {
    pub embed: TimestepEmbedder,
    pub modulation: Linear,
    pub dim: usize,
}

impl AdaLn {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize, embed_dim: usize) -> Self {
        Self {
            embed: TimestepEmbedder::new(store, rng, &format!("{name}.temb"), 32, 1, embed_dim),
            modulation: Linear::zeros(store, &format!("{name}.mod"), embed_dim, 2 * dim),
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, t: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("adaLN timestep {t} outside [0, 1]")));
        }
        if g.shape(x).1 != self.dim {
            return Err(Error::shape(format!(
                "adaLN expects {} channels, got {}",
                self.dim,
                g.shape(x).1
            )));
        }
        let c = self.embed.forward(g, p, &[t]);
        let c = g.silu(c);
        let m = self.modulation.forward(g, p, c);
        let scale = g.slice_cols(m, 0, self.dim);
        let shift = g.slice_cols(m, self.dim, 2 * self.dim);
        Ok(modulate(g, x, scale, shift))
    }
}

/// `LN(x) · (1 + scale) + shift` with `scale`/`shift` as 1×D rows.
pub fn modulate(g: &mut Graph, x: Var, scale: Var, shift: Var) -> Var {
    let n = g.layer_norm_rows(x);
    let s1 = g.add_scalar(scale, 1.0);
    let y = g.mul_row(n, s1);
    g.add_row(y, shift)
}

/// Pre-norm block: self-attention, optional cross-attention, feed-forward.
///
/// With `has_adaln`, every norm is modulated by a conditioning vector (1×E).
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub cfg: TransformerBlockConfig,
    norms: Vec<LayerNorm>,
    ctx_norm: Option<LayerNorm>,
    self_attn: Attention,
    cross_attn: Option<Attention>,
    ff: FeedForward,
    modulation: Option<Linear>,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        cfg: TransformerBlockConfig,
        ctx_dim: usize,
        cond_dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let n_norms = if cfg.has_cross_attention { 3 } else { 2 };
        let norms = if cfg.has_adaln {
            Vec::new()
        } else {
            (0..n_norms)
                .map(|i| LayerNorm::new(store, &format!("{name}.norm{i}"), d))
                .collect()
        };
        let self_attn = Attention::new(store, rng, &format!("{name}.self"), d, d, cfg.num_heads);
        let (cross_attn, ctx_norm) = if cfg.has_cross_attention {
            (
                Some(Attention::new(
                    store,
                    rng,
                    &format!("{name}.cross"),
                    d,
                    ctx_dim,
                    cfg.num_heads,
                )),
                Some(LayerNorm::new(store, &format!("{name}.ctx_norm"), ctx_dim)),
            )
        } else {
            (None, None)
        };
        let ff = FeedForward::new(store, rng, &format!("{name}.ff"), d, cfg.ff_mult * d);
        let modulation = cfg
            .has_adaln
            .then(|| Linear::zeros(store, &format!("{name}.adaln"), cond_dim, 2 * n_norms * d));
        Ok(Self {
            cfg,
            norms,
            ctx_norm,
            self_attn,
            cross_attn,
            ff,
            modulation,
        })
    }

    fn norm(&self, g: &mut Graph, p: &ParamStore, i: usize, x: Var, m: Option<Var>) -> Var {
        match m {
            Some(m) => {
                let d = self.cfg.model_dim;
                let scale = g.slice_cols(m, 2 * i * d, (2 * i + 1) * d);
                let shift = g.slice_cols(m, (2 * i + 1) * d, (2 * i + 2) * d);
                modulate(g, x, scale, shift)
            }
            None => self.norms[i].forward(g, p, x),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &ParamStore,
        x: Var,
        ctx: Option<Var>,
        cond: Option<Var>,
    ) -> Result<Var> {
        let d = self.cfg.model_dim;
        if g.shape(x).1 != d {
            return Err(Error::shape(format!(
                "block expects {d} channels, got {}",
                g.shape(x).1
            )));
        }
        let m = match (&self.modulation, cond) {
            (Some(lin), Some(c)) => {
                let c = g.silu(c);
                Some(lin.forward(g, p, c))
            }
            (Some(_), None) => return Err(Error::invalid("adaLN block needs a conditioning vector")),
            (None, _) => None,
        };

        let h = self.norm(g, p, 0, x, m);
        let a = self.self_attn.forward(g, p, h, h);
        let mut x = g.add(x, a);
        let mut next = 1;
        if let Some(cross) = &self.cross_attn {
            let ctx = ctx.ok_or_else(|| Error::invalid("cross-attention block needs a context"))?;
            let h = self.norm(g, p, next, x, m);
            let c = self.ctx_norm.as_ref().unwrap().forward(g, p, ctx);
            let a = cross.forward(g, p, h, c);
            x = g.add(x, a);
            next += 1;
        }
        let h = self.norm(g, p, next, x, m);
        let f = self.ff.forward(g, p, h);
        Ok(g.add(x, f))
    }
}
