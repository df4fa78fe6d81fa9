use ndarray::Array2;

use super::config::VaeConfig;
use crate::data::{FeatureMaps, ImageEncoder, ImageFeatures};
use crate::geometry::knn;
use crate::nn::{pos_encode, Graph, LayerNorm, Linear, ParamStore, TransformerBlock, TransformerBlockConfig, Var};
use crate::render::{Camera, GaussianPrimitive, RenderedImage, SplatVars};
use crate::{rng, Error, Result};

/// Encoder outputs inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct EncodedLatents {
    pub mu: Var,
    pub log_sigma: Var,
    /// Sampled latents in training mode, `mu` otherwise.
    pub z: Var,
}

/// Decoder outputs inside a graph.
#[derive(Clone, Debug)]
pub struct DecodedVars {
    /// Reconstructed anchor positions `X̂` (N×3).
    pub anchors: Var,
    /// Offsets `O`, row `i·m + j` for Gaussian `j` of anchor `i`.
    pub offsets: Var,
    pub centers: Var,
    /// Interpolated attribute latents, one row per Gaussian.
    pub attr_latents: Var,
    pub splats: SplatVars,
    /// Anchor indices each Gaussian interpolates from.
    pub neighbors: Vec<Vec<usize>>,
}

/// Graph-free decoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedGaussians {
    pub anchors: Vec<[f64; 3]>,
    pub offsets: Vec<[f64; 3]>,
    pub centers: Vec<[f64; 3]>,
    pub primitives: Vec<GaussianPrimitive>,
}

pub(crate) fn rows3(a: &Array2<f64>) -> Vec<[f64; 3]> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

pub(crate) fn points_array(p: &[[f64; 3]]) -> Array2<f64> {
    Array2::from_shape_fn((p.len(), 3), |(i, k)| p[i][k])
}

impl DecodedGaussians {
    pub fn from_graph(g: &Graph, d: &DecodedVars) -> Result<Self> {
        Ok(Self {
            anchors: rows3(g.value(d.anchors)),
            offsets: rows3(g.value(d.offsets)),
            centers: rows3(g.value(d.centers)),
            primitives: d.splats.primitives(g)?,
        })
    }

    /// Gaussians per anchor.
    pub fn per_anchor(&self) -> usize {
        self.centers.len() / self.anchors.len().max(1)
    }
}

/// `z + σ ε` with `σ = exp(log_sigma)`; without noise the mean is returned.
pub fn reparameterize(g: &mut Graph, mu: Var, log_sigma: Var, noise: Option<&Array2<f64>>) -> Result<Var> {
    match noise {
        None => Ok(mu),
        Some(eps) => {
            if eps.dim() != g.shape(mu) {
                return Err(Error::shape(format!("noise {:?} vs latents {:?}", eps.dim(), g.shape(mu))));
            }
            let s = g.exp(log_sigma);
            let e = g.constant(eps.clone());
            let se = g.mul(s, e);
            Ok(g.add(mu, se))
        }
    }
}

/// Attribute latent of each center as a softmax(−distance) blend of the fine
/// features of its `k` nearest reconstructed anchors.
pub fn interpolate_latents(g: &mut Graph, centers: Var, anchors: Var, fine: Var, k: usize) -> Result<(Var, Vec<Vec<usize>>)> {
    let cv = rows3(g.value(centers));
    let av = rows3(g.value(anchors));
    let k = k.min(av.len());
    let nb = knn(&cv, &av, k)?;
    let rep: Vec<usize> = (0..cv.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let flat: Vec<usize> = nb.iter().flatten().copied().collect();
    let c = g.gather_rows(centers, &rep);
    let a = g.gather_rows(anchors, &flat);
    let diff = g.sub(c, a);
    let sq = g.square(diff);
    let d2 = g.sum_rows(sq);
    let d2 = g.add_scalar(d2, 1e-12);
    let d = g.sqrt(d2);
    let nd = g.neg(d);
    let logits = g.reshape(nd, cv.len(), k);
    let w = g.softmax_rows(logits);
    let w = g.reshape(w, cv.len() * k, 1);
    let zf = g.gather_rows(fine, &flat);
    let wz = g.mul_col(zf, w);
    Ok((g.group_sum(wz, k), nb))
}

/// The anchor VAE: image encoder, two-stage latent encoder and the
/// coarse-to-fine Gaussian decoder.
#[derive(Clone, Debug)]
pub struct AnchorVae {
    pub cfg: VaeConfig,
    pub params: ParamStore,
    pub image: ImageEncoder,
    embed: Linear,
    geo_block: TransformerBlock,
    img_block: TransformerBlock,
    stats: Linear,
    dec_in: Linear,
    dec_blocks: Vec<TransformerBlock>,
    coarse_norm: LayerNorm,
    fine_norm: LayerNorm,
    coarse_head: Linear,
    offset_head: Linear,
    attr_head: Linear,
}

const ATTR_DIM: usize = 11;

impl AnchorVae {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, 0x7ae, 0);
        let mut p = ParamStore::new();
        let d = cfg.model_dim;
        let pe = cfg.posenc.output_dim();
        let image = ImageEncoder::new(&mut p, &mut rng, "img", cfg.image.clone())?;
        let c = cfg.image.plane_channels();
        let cross = TransformerBlockConfig {
            has_cross_attention: true,
            ..TransformerBlockConfig::new(d, cfg.num_heads)
        };
        let embed = Linear::new(&mut p, &mut rng, "enc.embed", pe + c, d);
        let geo_block = TransformerBlock::new(&mut p, &mut rng, "enc.geo", cross, pe, 0)?;
        let img_block = TransformerBlock::new(&mut p, &mut rng, "enc.img", cross, cfg.image.token_dim, 0)?;
        let stats = Linear::new(&mut p, &mut rng, "enc.stats", d, 2 * cfg.latent_dim);
        // start with small posterior variance
        for v in p.get_mut(stats.b.unwrap()).slice_mut(ndarray::s![0, cfg.latent_dim..]).iter_mut() {
            *v = -2.0;
        }
        let dec_in = Linear::new(&mut p, &mut rng, "dec.in", cfg.latent_dim, d);
        let dec_blocks = (0..cfg.decoder_layers)
            .map(|l| TransformerBlock::new(&mut p, &mut rng, &format!("dec.block{l}"), TransformerBlockConfig::new(d, cfg.num_heads), 0, 0))
            .collect::<Result<Vec<_>>>()?;
        let coarse_norm = LayerNorm::new(&mut p, "dec.coarse_norm", d);
        let fine_norm = LayerNorm::new(&mut p, "dec.fine_norm", d);
        let coarse_head = Linear::new(&mut p, &mut rng, "dec.coarse", d, 3);
        let offset_head = Linear::new(&mut p, &mut rng, "dec.offset", d, 3 * cfg.gaussians_per_anchor);
        let attr_head = Linear::new(&mut p, &mut rng, "dec.attr", d, ATTR_DIM);
        {
            let b = p.get_mut(attr_head.b.unwrap());
            // opacity, scale and rotation start near a small opaque sphere
            b[[0, 3]] = 2.0;
            let s0 = 0.04 / cfg.max_scale;
            for k in 4..7 {
                b[[0, k]] = (s0 / (1.0 - s0)).ln();
            }
            b[[0, 7]] = 1.0;
        }
        Ok(Self {
            cfg,
            params: p,
            image,
            embed,
            geo_block,
            img_block,
            stats,
            dec_in,
            dec_blocks,
            coarse_norm,
            fine_norm,
            coarse_head,
            offset_head,
            attr_head,
        })
    }

    pub fn image_features(&self, g: &mut Graph, img: &RenderedImage) -> Result<ImageFeatures> {
        self.image.encode(g, &self.params, img)
    }

    /// Image features without gradient tracking.
    pub fn feature_maps(&self, img: &RenderedImage) -> Result<FeatureMaps> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let f = self.image_features(&mut g, img)?;
        Ok(FeatureMaps::from_graph(&g, &f))
    }

    fn check_camera(&self, cam: &Camera) -> Result<()> {
        let s = self.cfg.image.image_size;
        if cam.width != s || cam.height != s {
            return Err(Error::invalid(format!(
                "camera is {}×{} but the encoder takes {s}×{s} images",
                cam.width, cam.height
            )));
        }
        Ok(())
    }

    /// Projected per-anchor features `f_i` from the feature plane.
    pub fn anchor_features(&self, g: &mut Graph, feats: &ImageFeatures, anchors: &[[f64; 3]], cam: &Camera) -> Result<Var> {
        self.check_camera(cam)?;
        let sp = feats.sampler(anchors, cam);
        Ok(g.sparse_rows(feats.plane, std::sync::Arc::new(sp)))
    }

    /// Latent encoder given per-anchor features and image tokens.
    pub fn encode_with_features(
        &self,
        g: &mut Graph,
        anchors: &[[f64; 3]],
        cloud: &[[f64; 3]],
        features: Var,
        tokens: Var,
        noise: Option<&Array2<f64>>,
    ) -> Result<EncodedLatents> {
        let c = self.cfg.image.plane_channels();
        if anchors.is_empty() || cloud.is_empty() {
            return Err(Error::invalid("encoder needs anchors and a cloud"));
        }
        if g.shape(features) != (anchors.len(), c) {
            return Err(Error::shape(format!(
                "anchor features {:?}, expected ({}, {c})",
                g.shape(features),
                anchors.len()
            )));
        }
        let pa = g.constant(pos_encode(anchors, &self.cfg.posenc)?);
        let pc = g.constant(pos_encode(cloud, &self.cfg.posenc)?);
        let x = g.concat_cols(&[pa, features]);
        let h = self.embed.forward(g, &self.params, x);
        let h = self.geo_block.forward(g, &self.params, h, Some(pc), None)?;
        let h = self.img_block.forward(g, &self.params, h, Some(tokens), None)?;
        let s = self.stats.forward(g, &self.params, h);
        let d = self.cfg.latent_dim;
        let mu = g.slice_cols(s, 0, d);
        let log_sigma = g.slice_cols(s, d, 2 * d);
        let z = reparameterize(g, mu, log_sigma, noise)?;
        Ok(EncodedLatents { mu, log_sigma, z })
    }

    /// Full encoder from an image; returns the latents and the image features.
    pub fn encode(
        &self,
        g: &mut Graph,
        anchors: &[[f64; 3]],
        cloud: &[[f64; 3]],
        image: &RenderedImage,
        cam: &Camera,
        noise: Option<&Array2<f64>>,
    ) -> Result<(EncodedLatents, ImageFeatures)> {
        self.check_camera(cam)?;
        let feats = self.image_features(g, image)?;
        let f = self.anchor_features(g, &feats, anchors, cam)?;
        let lat = self.encode_with_features(g, anchors, cloud, f, feats.tokens, noise)?;
        Ok((lat, feats))
    }

    /// Eval-mode latent means from fixed feature arrays.
    pub fn encode_values(&self, anchors: &[[f64; 3]], cloud: &[[f64; 3]], features: &Array2<f64>, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let f = g.constant(features.clone());
        let t = g.constant(tokens.clone());
        let lat = self.encode_with_features(&mut g, anchors, cloud, f, t, None)?;
        Ok(g.value(lat.mu).clone())
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<DecodedVars> {
        let cfg = &self.cfg;
        let (n, d) = g.shape(z);
        if d != cfg.latent_dim || n == 0 {
            return Err(Error::shape(format!("latents ({n}, {d}), expected (N, {})", cfg.latent_dim)));
        }
        if g.value(z).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder input latents".into()));
        }
        let p = &self.params;
        let mut h = self.dec_in.forward(g, p, z);
        let mut coarse = h;
        for (l, b) in self.dec_blocks.iter().enumerate() {
            h = b.forward(g, p, h, None, None)?;
            if l + 1 == cfg.coarse_layer {
                coarse = h;
            }
        }
        let m = cfg.gaussians_per_anchor;
        let coarse = self.coarse_norm.forward(g, p, coarse);
        let h = self.fine_norm.forward(g, p, h);
        let anchors = self.coarse_head.forward(g, p, coarse);
        let raw = self.offset_head.forward(g, p, h);
        let t = g.tanh(raw);
        let t = g.scale(t, cfg.offset_bound);
        let offsets = g.reshape(t, n * m, 3);
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
        let base = g.gather_rows(anchors, &rep);
        let centers = g.add(base, offsets);
        let (attr_latents, neighbors) = interpolate_latents(g, centers, anchors, h, cfg.interp_neighbors)?;
        let a = self.attr_head.forward(g, p, attr_latents);
        let c = g.slice_cols(a, 0, 3);
        let colors = g.sigmoid(c);
        let o = g.slice_cols(a, 3, 4);
        let opacities = g.sigmoid(o);
        let s = g.slice_cols(a, 4, 7);
        let s = g.sigmoid(s);
        let scales = g.scale(s, cfg.max_scale);
        let r = g.slice_cols(a, 7, 11);
        let rotations = g.normalize_rows(r, 1e-12);
        Ok(DecodedVars {
            anchors,
            offsets,
            centers,
            attr_latents,
            splats: SplatVars {
                centers,
                scales,
                rotations,
                opacities,
                colors,
            },
            neighbors,
        })
    }

    pub fn decode_values(&self, z: &Array2<f64>) -> Result<DecodedGaussians> {
        let mut g = Graph::new();
        g.freeze(&self.params);
        let zv = g.constant(z.clone());
        let d = self.decode(&mut g, zv)?;
        DecodedGaussians::from_graph(&g, &d)
    }
}
