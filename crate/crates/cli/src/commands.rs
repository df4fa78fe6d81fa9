//! Batch commands: dataset export, training, bundling, generation and rendering.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seedsplat::data::{DatasetManifest, ViewRig};
use seedsplat::flow::{
    build_pairs, flow_metrics_header, write_flow_metrics_row, Alignment, FlowRunConfig, FlowTask, FlowTrainConfig, FlowTrainer,
    MapperConfig, PairRecord, SeedAnchorMapper, SeedGenConfig, SeedGenerator,
};
use seedsplat::io::checkpoint::Checkpoint;
use seedsplat::io::{cloud, image, splats};
use seedsplat::pipeline::Pipeline;
use seedsplat::render::{rasterize, GaussianPrimitive, RenderOptions};
use seedsplat::vae::{metrics_header, write_metrics_row, AnchorVae, PreparedObject, VaeConfig, VaeTrainConfig, VaeTrainer, VAE_KIND};
use seedsplat::Error;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(v)
}

/// Relative paths inside a config file are taken relative to that file.
fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Precondition(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn load_manifest(path: Option<&Path>) -> Result<DatasetManifest> {
    match path {
        Some(p) => DatasetManifest::load(p)
            .map_err(anyhow::Error::from)
            .with_context(|| format!("loading manifest {}", p.display())),
        None => Ok(DatasetManifest::toy(4, 0)),
    }
}

/// Writes a procedural dataset: manifest, clouds and views.
pub fn dataset(manifest: Option<&Path>, objects: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let m = match manifest {
        Some(p) => load_manifest(Some(p))?,
        None => DatasetManifest::toy(objects, seed),
    };
    m.validate()?;
    m.export(out).with_context(|| format!("exporting dataset to {}", out.display()))?;
    Ok(m)
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub out: PathBuf,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub alignment: Option<Alignment>,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn checkpoint_path(out: &Path, kind: &str, step: Option<usize>) -> PathBuf {
    match step {
        Some(s) => out.join(format!("{kind}_step{s:06}.ckpt")),
        None => out.join(format!("{kind}.ckpt")),
    }
}

fn metrics_writer(out: &Path, kind: &str, header: &str, append: bool) -> Result<(PathBuf, BufWriter<File>)> {
    let path = out.join(format!("{kind}_metrics.csv"));
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&path)
        ?;
    if !append {
        writeln!(f, "{header}")?;
    }
    Ok((path, BufWriter::new(f)))
}

pub fn train_vae(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg: VaeTrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => VaeTrainConfig::default(),
    };
    if let Some(s) = args.steps {
        cfg.steps = s;
        cfg.optimizer.total_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| cfg.manifest.as_ref().map(|m| resolve(args.config.as_deref(), m)));
    let manifest = load_manifest(manifest_path.as_deref())?;
    cfg.manifest = manifest_path.map(|p| fs::canonicalize(&p).unwrap_or(p));
    fs::create_dir_all(&args.out)?;
    let mut t = match &args.resume {
        Some(p) => {
            require_file(p, "resume checkpoint")?;
            VaeTrainer::resume(&Checkpoint::load(p)?, &manifest)?
        }
        None => VaeTrainer::new(cfg, &manifest)?,
    };
    let (metrics, mut w) = metrics_writer(&args.out, VAE_KIND, metrics_header(), args.resume.is_some())?;
    let mut first = None;
    let mut last = f64::NAN;
    while t.step < t.cfg.steps {
        let step = t.step;
        let l = t.train_step().with_context(|| format!("vae step {step}"))?;
        write_metrics_row(&mut w, step, &l)?;
        first.get_or_insert(l.total);
        last = l.total;
        let every = t.cfg.checkpoint_every;
        if every > 0 && t.step % every == 0 && t.step < t.cfg.steps {
            t.checkpoint()?.save(checkpoint_path(&args.out, VAE_KIND, Some(t.step)))?;
        }
    }
    w.flush()?;
    let checkpoint = checkpoint_path(&args.out, VAE_KIND, None);
    t.checkpoint()?.save(&checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        metrics,
        steps: t.step,
        initial_loss: first.unwrap_or(f64::NAN),
        final_loss: last,
    })
}

/// Flow models trainable from the command line.
pub trait FlowCommand: FlowTask {
    fn default_config(vae: &VaeConfig, seeds: usize) -> Self::Config;
    fn seeds(cfg: &Self::Config) -> usize;
    fn set_alignment(_cfg: &mut Self::Config, _a: Alignment) {}
}

impl FlowCommand for SeedGenerator {
    fn default_config(vae: &VaeConfig, seeds: usize) -> SeedGenConfig {
        SeedGenConfig {
            seeds,
            ..SeedGenConfig::for_vae(vae)
        }
    }

    fn seeds(cfg: &SeedGenConfig) -> usize {
        cfg.seeds
    }
}

impl FlowCommand for SeedAnchorMapper {
    fn default_config(vae: &VaeConfig, seeds: usize) -> MapperConfig {
        MapperConfig::for_vae(vae, seeds)
    }

    fn seeds(cfg: &MapperConfig) -> usize {
        cfg.seeds
    }

    fn set_alignment(cfg: &mut MapperConfig, a: Alignment) {
        cfg.alignment = a;
    }
}

/// Loads a frozen VAE checkpoint.
pub fn load_vae(path: &Path) -> Result<(AnchorVae, VaeTrainConfig)> {
    require_file(path, "VAE checkpoint")?;
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(VAE_KIND)?;
    let cfg: VaeTrainConfig = ck.config()?;
    let mut vae = AnchorVae::new(cfg.model.clone(), 0)?;
    ck.load_params(&mut vae.params)?;
    Ok((vae, cfg))
}

/// Pair records for flow training from every object in the manifest.
pub fn flow_pairs(vae: &AnchorVae, manifest: &DatasetManifest, seeds: usize) -> Result<Vec<PairRecord>> {
    let objs = manifest
        .generate_all()?
        .iter()
        .map(|s| PreparedObject::new(s, &vae.cfg))
        .collect::<seedsplat::Result<Vec<_>>>()?;
    Ok(build_pairs(vae, &objs, seeds)?)
}

pub fn train_flow<T: FlowCommand>(args: &TrainArgs) -> Result<TrainSummary> {
    let file_cfg: Option<FlowRunConfig<T::Config>> = args.config.as_deref().map(read_json).transpose()?;
    let vae_path = args
        .vae
        .clone()
        .or_else(|| {
            let c = file_cfg.as_ref()?;
            c.train.vae_checkpoint.as_ref().map(|p| resolve(args.config.as_deref(), p))
        })
        .ok_or_else(|| Error::Precondition(format!("training the {} flow needs a frozen VAE checkpoint (--vae)", T::KIND)))?;
    let (vae, vae_cfg) = load_vae(&vae_path)?;
    let mut cfg = file_cfg.unwrap_or_else(|| FlowRunConfig {
        model: T::default_config(&vae.cfg, args.seeds.unwrap_or(16)),
        train: FlowTrainConfig::default(),
    });
    if let Some(a) = args.alignment {
        T::set_alignment(&mut cfg.model, a);
    }
    if let Some(s) = args.steps {
        cfg.train.steps = s;
        cfg.train.optimizer.total_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| cfg.train.manifest.as_ref().map(|m| resolve(args.config.as_deref(), m)))
        .or_else(|| vae_cfg.manifest.clone());
    let manifest = load_manifest(manifest_path.as_deref())?;
    cfg.train.manifest = manifest_path.map(|p| fs::canonicalize(&p).unwrap_or(p));
    cfg.train.vae_checkpoint = Some(fs::canonicalize(&vae_path).unwrap_or(vae_path));
    let pairs = flow_pairs(&vae, &manifest, T::seeds(&cfg.model))?;
    fs::create_dir_all(&args.out)?;
    let mut t = match &args.resume {
        Some(p) => {
            require_file(p, "resume checkpoint")?;
            FlowTrainer::<T>::resume(&Checkpoint::load(p)?, pairs)?
        }
        None => FlowTrainer::<T>::new(cfg, pairs)?,
    };
    let (metrics, mut w) = metrics_writer(&args.out, T::KIND, flow_metrics_header(), args.resume.is_some())?;
    let mut first = None;
    let mut last = f64::NAN;
    while t.step < t.cfg.train.steps {
        let step = t.step;
        let l = t.train_step().with_context(|| format!("{} step {step}", T::KIND))?;
        write_flow_metrics_row(&mut w, step, l)?;
        first.get_or_insert(l);
        last = l;
        let every = t.cfg.train.checkpoint_every;
        if every > 0 && t.step % every == 0 && t.step < t.cfg.train.steps {
            t.checkpoint()?.save(checkpoint_path(&args.out, T::KIND, Some(t.step)))?;
        }
    }
    w.flush()?;
    let checkpoint = checkpoint_path(&args.out, T::KIND, None);
    t.checkpoint()?.save(&checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        metrics,
        steps: t.step,
        initial_loss: first.unwrap_or(f64::NAN),
        final_loss: last,
    })
}

/// Assembles the three checkpoints into one bundle file.
pub fn bundle(vae: &Path, seed: &Path, mapper: &Path, manifest: Option<&Path>, out: &Path) -> Result<Pipeline> {
    require_file(vae, "VAE checkpoint")?;
    require_file(seed, "seed generator checkpoint")?;
    require_file(mapper, "mapper checkpoint")?;
    let vck = Checkpoint::load(vae)?;
    let manifest = match manifest {
        Some(p) => Some(load_manifest(Some(p))?),
        None => {
            let cfg: VaeTrainConfig = vck.config()?;
            cfg.manifest.as_deref().map(|p| load_manifest(Some(p))).transpose()?
        }
    };
    let (rig, bg) = match manifest {
        Some(m) => (m.rig, m.background),
        None => (ViewRig::default(), [1.0; 3]),
    };
    let p = Pipeline::from_checkpoints(&vck, &Checkpoint::load(seed)?, &Checkpoint::load(mapper)?, rig, bg)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    p.save(out)?;
    Ok(p)
}

/// Record of everything `generate` wrote, with content hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateManifest {
    pub bundle_version: String,
    pub seed: u64,
    pub views: usize,
    pub image_sha256: String,
    pub seed_count: usize,
    pub gaussian_count: usize,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

pub const SEEDS_FILE: &str = "seeds.ply";
pub const SPLATS_PLY: &str = "splats.ply";
pub const SPLATS_BIN: &str = "splats.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn view_file(v: usize) -> String {
    format!("view_{v:02}.png")
}

fn write_tracked(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    fs::write(dir.join(name), bytes)?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<Pipeline> {
    require_file(path, "bundle")?;
    Pipeline::load(path)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("loading bundle {}", path.display()))
}

/// Image → seeds, splats and renders under `out`.
pub fn generate(image_path: &Path, bundle: &Pipeline, out: &Path, views: usize, seed: u64) -> Result<GenerateManifest> {
    let bytes = fs::read(image_path)
        .with_context(|| format!("reading image {}", image_path.display()))?;
    let img = image::decode_png(&bytes).with_context(|| format!("decoding image {}", image_path.display()))?;
    let g = bundle.generate(&img, seed)?;
    let renders = bundle.render_views(&g.decoded.primitives, views)?;
    fs::create_dir_all(out)?;
    let mut files = BTreeMap::new();
    write_tracked(out, SEEDS_FILE, cloud::write_ply(&g.seeds, None)?.as_bytes(), &mut files)?;
    write_tracked(out, SPLATS_PLY, &splats::write_ply(&g.decoded.primitives), &mut files)?;
    write_tracked(out, SPLATS_BIN, &splats::write_binary(&g.decoded.primitives), &mut files)?;
    for (v, r) in renders.iter().enumerate() {
        write_tracked(out, &view_file(v), &image::encode_png(r)?, &mut files)?;
    }
    let m = GenerateManifest {
        bundle_version: bundle.version.clone(),
        seed,
        views,
        image_sha256: sha256_hex(&bytes),
        seed_count: g.seeds.len(),
        gaussian_count: g.decoded.primitives.len(),
        files,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// Reads splats from `.ply` or the binary format.
pub fn load_splats(path: &Path) -> Result<Vec<GaussianPrimitive>> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading splats {}", path.display()))?;
    let prims = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        splats::read_ply(&bytes)?
    } else {
        splats::read_binary(&bytes)?
    };
    Ok(prims)
}

/// Renders a splat file on a ring of `rig.views` cameras; returns the PNG paths.
pub fn render(splat_path: &Path, rig: &ViewRig, opts: &RenderOptions, out: &Path) -> Result<Vec<PathBuf>> {
    let prims = load_splats(splat_path)?;
    fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(rig.views);
    for v in 0..rig.views {
        let img = rasterize(&prims, &rig.camera(v)?, opts)?;
        let p = out.join(view_file(v));
        image::save_png(&p, &img)?;
        paths.push(p);
    }
    Ok(paths)
}
