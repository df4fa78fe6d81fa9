//! Central finite-difference checks of every learned operation in float64.

use anyhow::ensure;
use ndarray::Array2;
use rand::Rng as _;
use seedsplat::data::{DatasetManifest, ImageEncoder, ImageEncoderConfig, ViewRig};
use seedsplat::flow::{FlowCond, FlowNet, FlowNetConfig, PointwiseFlowNet};
use seedsplat::geometry::ClusterAssignment;
use seedsplat::nn::gradcheck::{check_inputs, check_store, relative_error};
use seedsplat::nn::{
    AdaLn, Attention, FeedForward, Graph, LayerNorm, Linear, ParamStore, TimestepEmbedder, TransformerBlock,
    TransformerBlockConfig, Var,
};
use seedsplat::render::{rasterize, rasterize_backward, Camera, GaussianPrimitive, RenderOptions};
use seedsplat::rng::{self, Rng};
use seedsplat::vae::{object_loss, AnchorVae, LossWeights, PreparedObject, VaeConfig};

use super::shared::{normal_mat, perturb, project};
use super::Outcome;

const LAYER_TOL: f64 = 1e-4;
const COMPOSITE_TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

/// Worst error over parameters (sampled) and, when `x` is given, every input coordinate.
fn check<F>(store: &mut ParamStore, x: Option<&Array2<f64>>, samples: usize, seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore, Var) -> Var,
{
    let x0 = x.cloned().unwrap_or_else(|| Array2::zeros((1, 1)));
    let run = |p: &ParamStore, xin: &Array2<f64>, leaf: bool| {
        let mut g = Graph::new();
        let xv = if leaf { g.leaf(xin.clone()) } else { g.constant(xin.clone()) };
        let out = build(&mut g, p, xv);
        let l = project(&mut g, out, seed);
        (g, l, xv)
    };
    let rep = check_store(
        store,
        |p| {
            let (g, l, _) = run(p, &x0, false);
            (g.scalar(l), g.backward(l).unwrap().for_store(p))
        },
        EPS,
        samples,
        &mut rng::stream(seed, 0xc4, 0),
    );
    let mut worst = rep.max_rel_err;
    if let Some(x) = x {
        let (g, l, xv) = run(store, x, true);
        let gx = g.backward(l).unwrap().wrt(xv).unwrap().clone();
        let e = check_inputs(x, |xi| {
            let (g, l, _) = run(store, xi, false);
            g.scalar(l)
        }, &gx, EPS);
        worst = worst.max(e);
    }
    worst
}

fn layers() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng::stream(1, 0, 0);

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, &mut r, "lin", 5, 4);
    perturb(&mut s, 0.3, 1);
    let x = normal_mat(&mut r, 3, 5);
    out.push(("linear", check(&mut s, Some(&x), 32, 1, |g, p, x| lin.forward(g, p, x))));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 6);
    perturb(&mut s, 0.3, 2);
    let x = normal_mat(&mut r, 4, 6);
    out.push(("layer-norm", check(&mut s, Some(&x), 32, 2, |g, p, x| ln.forward(g, p, x))));

    let mut s = ParamStore::new();
    let attn = Attention::new(&mut s, &mut r, "attn", 8, 8, 2);
    perturb(&mut s, 0.1, 3);
    let x = normal_mat(&mut r, 4, 8);
    out.push(("self-attention", check(&mut s, Some(&x), 16, 3, |g, p, x| attn.forward(g, p, x, x))));

    let mut s = ParamStore::new();
    let attn = Attention::new(&mut s, &mut r, "xattn", 8, 5, 2);
    perturb(&mut s, 0.1, 4);
    let x = normal_mat(&mut r, 4, 8);
    let ctx = normal_mat(&mut r, 3, 5);
    out.push(("cross-attention", check(&mut s, Some(&x), 16, 4, |g, p, x| {
        let c = g.constant(ctx.clone());
        attn.forward(g, p, x, c)
    })));

    let mut s = ParamStore::new();
    let ff = FeedForward::new(&mut s, &mut r, "ff", 6, 12);
    perturb(&mut s, 0.1, 5);
    let x = normal_mat(&mut r, 3, 6);
    out.push(("feed-forward", check(&mut s, Some(&x), 16, 5, |g, p, x| ff.forward(g, p, x))));

    let mut s = ParamStore::new();
    let te = TimestepEmbedder::new(&mut s, &mut r, "temb", 8, 2, 6);
    perturb(&mut s, 0.1, 6);
    out.push(("timestep-embedder", check(&mut s, None, 16, 6, |g, p, _| te.forward(g, p, &[0.3, 0.8]))));

    let mut s = ParamStore::new();
    let ada = AdaLn::new(&mut s, &mut r, "ada", 4, 6);
    perturb(&mut s, 0.3, 7);
    let x = normal_mat(&mut r, 3, 4);
    out.push(("adaln", check(&mut s, Some(&x), 16, 7, |g, p, x| ada.forward(g, p, x, 0.4).unwrap())));

    for adaln in [false, true] {
        let mut s = ParamStore::new();
        let cfg = TransformerBlockConfig {
            model_dim: 8,
            num_heads: 2,
            has_cross_attention: true,
            has_adaln: adaln,
            ff_mult: 2,
        };
        let blk = TransformerBlock::new(&mut s, &mut r, "blk", cfg, 5, 6).unwrap();
        perturb(&mut s, 0.3, 8);
        let x = normal_mat(&mut r, 4, 8);
        let ctx = normal_mat(&mut r, 3, 5);
        let cond = normal_mat(&mut r, 1, 6);
        let name = if adaln { "transformer-block+adaln" } else { "transformer-block" };
        out.push((name, check(&mut s, Some(&x), 6, 8, |g, p, x| {
            let c = g.constant(ctx.clone());
            let cd = g.constant(cond.clone());
            blk.forward(g, p, x, Some(c), Some(cd)).unwrap()
        })));
    }
    out
}

fn tiny_vae() -> VaeConfig {
    VaeConfig {
        anchors: 6,
        surface_points: 24,
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

fn tiny_object(cfg: &VaeConfig) -> PreparedObject {
    let mut m = DatasetManifest::toy(1, 5);
    m.rig = ViewRig {
        views: 2,
        width: 16,
        height: 16,
        ..ViewRig::default()
    };
    m.surface_points = cfg.surface_points;
    m.dense_points = cfg.gaussian_count();
    PreparedObject::new(&m.generate(0).unwrap(), cfg).unwrap()
}

/// Like [`check`] for models that read their own store; gradients are
/// collected against the clone the forward actually bound.
fn owned_check<M: Clone>(
    model: &M,
    store: fn(&mut M) -> &mut ParamStore,
    x: Option<&Array2<f64>>,
    samples: usize,
    seed: u64,
    build: impl Fn(&M, &mut Graph, Var) -> Var,
) -> f64 {
    let x0 = x.cloned().unwrap_or_else(|| Array2::zeros((1, 1)));
    let run = |m: &M, xin: &Array2<f64>, leaf: bool| {
        let mut g = Graph::new();
        let xv = if leaf { g.leaf(xin.clone()) } else { g.constant(xin.clone()) };
        let out = build(m, &mut g, xv);
        let l = project(&mut g, out, seed);
        (g, l, xv)
    };
    let mut params = store(&mut model.clone()).clone();
    let rep = check_store(
        &mut params,
        |p| {
            let mut m = model.clone();
            *store(&mut m) = p.clone();
            let (g, l, _) = run(&m, &x0, false);
            let grads = g.backward(l).unwrap().for_store(store(&mut m));
            (g.scalar(l), grads)
        },
        EPS,
        samples,
        &mut rng::stream(seed, 0xc5, 0),
    );
    let mut worst = rep.max_rel_err;
    if let Some(x) = x {
        let (g, l, xv) = run(model, x, true);
        let gx = g.backward(l).unwrap().wrt(xv).unwrap().clone();
        let e = check_inputs(x, |xi| {
            let (g, l, _) = run(model, xi, false);
            g.scalar(l)
        }, &gx, EPS);
        worst = worst.max(e);
    }
    worst
}

fn vae_params(v: &mut AnchorVae) -> &mut ParamStore {
    &mut v.params
}

pub fn random_scene(r: &mut Rng, n: usize) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| {
            let q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            GaussianPrimitive {
                center: [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-3.5..-2.5)],
                scale: std::array::from_fn(|_| r.random_range(0.05..0.3)),
                rotation: q.map(|v| v / qn),
                opacity: r.random_range(0.1..0.9),
                color: std::array::from_fn(|_| r.random()),
            }
        })
        .collect()
}

fn rasterizer() -> f64 {
    let mut r = rng::stream(7, 0, 0);
    let cam = Camera::look_at([0.1, 0.1, 0.0], [0.0, 0.0, -3.0], [0.0, 1.0, 0.0], 40.0, 10, 8).unwrap();
    let opts = RenderOptions {
        background: [0.3, 0.2, 0.1],
        cutoff: false,
    };
    let scene = random_scene(&mut r, 3);
    let wgt = normal_mat(&mut r, 80, 3);
    let loss = |s: &[GaussianPrimitive]| (&rasterize(s, &cam, &opts).unwrap().color * &wgt).sum();
    let g = rasterize_backward(&scene, &cam, &opts, &wgt).unwrap();
    let eps = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..scene.len() {
        for f in 0..14 {
            let bump = |s: &mut GaussianPrimitive, d: f64| match f {
                0..=2 => s.center[f] += d,
                3..=5 => s.scale[f - 3] += d,
                6..=9 => s.rotation[f - 6] += d,
                10 => s.opacity += d,
                _ => s.color[f - 11] += d,
            };
            analytic.push(match f {
                0..=2 => g.center[i][f],
                3..=5 => g.scale[i][f - 3],
                6..=9 => g.rotation[i][f - 6],
                10 => g.opacity[i],
                _ => g.color[i][f - 11],
            });
            let mut sp = scene.clone();
            bump(&mut sp[i], eps);
            let mut sm = scene.clone();
            bump(&mut sm[i], -eps);
            numeric.push((loss(&sp) - loss(&sm)) / (2.0 * eps));
        }
    }
    relative_error(&analytic, &numeric)
}

fn composites() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng::stream(2, 0, 0);

    let mut s = ParamStore::new();
    let enc = ImageEncoder::new(&mut s, &mut r, "img", ImageEncoderConfig {
        image_size: 8,
        channels: [3, 3, 4],
        patch: 8,
        token_dim: 4,
    })
    .unwrap();
    perturb(&mut s, 0.05, 9);
    let img = Array2::from_shape_fn((64, 3), |_| r.random::<f64>());
    out.push(("image-encoder", check(&mut s, Some(&img), 8, 9, |g, p, x| {
        let f = enc.forward(g, p, x).unwrap();
        let a = project(g, f.plane, 91);
        let b = project(g, f.tokens, 92);
        g.add(a, b)
    })));

    let cfg = tiny_vae();
    let mut vae = AnchorVae::new(cfg.clone(), 3).unwrap();
    perturb(&mut vae.params, 0.05, 10);
    let obj = tiny_object(&cfg);
    let noise = normal_mat(&mut r, cfg.anchors, cfg.latent_dim);
    out.push(("vae-encoder", owned_check(&vae, vae_params, None, 4, 10, |v, g, _| {
        let (img, cam) = obj.input();
        let (lat, _) = v.encode(g, &obj.anchors, &obj.cloud, img, cam, Some(&noise)).unwrap();
        let a = project(g, lat.mu, 101);
        let b = project(g, lat.log_sigma, 102);
        let c = project(g, lat.z, 103);
        let ab = g.add(a, b);
        g.add(ab, c)
    })));

    let z = normal_mat(&mut r, cfg.anchors, cfg.latent_dim);
    out.push(("vae-decoder", owned_check(&vae, vae_params, None, 6, 11, |v, g, _| {
        let zv = g.constant(z.clone());
        let d = v.decode(g, zv).unwrap();
        let outs = [d.anchors, d.centers, d.splats.scales, d.splats.colors, d.splats.rotations, d.splats.opacities];
        let mut l = project(g, d.offsets, 110);
        for (k, o) in outs.into_iter().enumerate() {
            let t = project(g, o, 111 + k as u64);
            l = g.add(l, t);
        }
        l
    })));

    let mut e2e = cfg.clone();
    e2e.anchors = 2;
    e2e.interp_neighbors = 2;
    let vae2 = AnchorVae::new(e2e.clone(), 7).unwrap();
    let obj2 = tiny_object(&e2e);
    let noise2 = normal_mat(&mut r, 2, e2e.latent_dim);
    let opts = RenderOptions::default();
    let mut store = vae2.params.clone();
    let rep = check_store(
        &mut store,
        |p| {
            let mut v = vae2.clone();
            v.params = p.clone();
            let (parts, grads) = object_loss(&v, &obj2, &LossWeights::default(), &opts, Some(&noise2), true).unwrap();
            (parts.total, grads)
        },
        EPS,
        3,
        &mut rng::stream(12, 0, 0),
    );
    out.push(("vae-end-to-end", rep.max_rel_err));

    out.push(("rasterize-backward", rasterizer()));

    let (x, ctx) = (normal_mat(&mut r, 6, 3), normal_mat(&mut r, 4, 5));
    let clusters = ClusterAssignment::from_owner(2, vec![0, 1, 0, 1, 1, 0]).unwrap();
    for clustered in [false, true] {
        let cfg = FlowNetConfig {
            token_dim: 3,
            token_slots: if clustered { 6 } else { 0 },
            model_dim: 8,
            num_heads: 2,
            blocks: 3,
            down_blocks: usize::from(clustered),
            up_blocks: usize::from(clustered),
            cond_dim: 8,
            aug_conditioning: clustered,
            context_dim: 5,
            ff_mult: 2,
        };
        let mut net = FlowNet::new(cfg, 0).unwrap();
        perturb(&mut net.params, 0.1, 13);
        let name = if clustered { "flow-net-clustered" } else { "flow-net" };
        out.push((name, owned_check(&net, |n| &mut n.params, Some(&x), 6, 13, |n, g, xv| {
            let c = FlowCond {
                t: 0.4,
                aug: 0.2,
                context: Some(&ctx),
                clusters: Some(&clusters),
            };
            n.forward(g, xv, &c).unwrap()
        })));
    }

    let mut pw = PointwiseFlowNet::new(2, 8, 2, 0).unwrap();
    perturb(&mut pw.params, 0.2, 14);
    let x = normal_mat(&mut r, 3, 2);
    out.push(("pointwise-flow-net", owned_check(&pw, |n| &mut n.params, Some(&x), 8, 14, |n, g, xv| {
        n.forward(g, xv, &[0.1, 0.5, 0.9]).unwrap()
    })));
    out
}

pub fn run() -> Outcome {
    let layers = layers();
    let composites = composites();
    fn worst(v: &[(&'static str, f64)]) -> (&'static str, f64) {
        v.iter()
            .fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 || e.is_nan() { (n, e) } else { acc })
    }
    let (ln, le) = worst(&layers);
    let (cn, ce) = worst(&composites);
    let bad: Vec<String> = layers
        .iter()
        .filter(|(_, e)| !(*e < LAYER_TOL))
        .chain(composites.iter().filter(|(_, e)| !(*e < COMPOSITE_TOL)))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure!(bad.is_empty(), "over tolerance: {}", bad.join(", "));
    Ok(format!(
        "{} layers max {le:.1e} ({ln}) < {LAYER_TOL:.0e}; {} composites max {ce:.1e} ({cn}) < {COMPOSITE_TOL:.0e}",
        layers.len(),
        composites.len()
    ))
}
