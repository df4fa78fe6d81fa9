use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seedsplat::data::ViewRig;
use seedsplat::flow::{Alignment, SeedAnchorMapper, SeedGenerator};
use seedsplat::render::RenderOptions;
use seedsplat_cli::commands::{self, TrainArgs};
use seedsplat_cli::exit;
use seedsplat_cli::service::{self, AppState, ServeOptions};
use seedsplat_cli::store::DEFAULT_CAPACITY;

/// Seed-driven 3D Gaussian generation and drag editing
#[derive(Parser)]
#[command(name = "seedsplat", version)]
struct Cli {
    /// Run numeric work on a single thread
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a procedural dataset (manifest, clouds, views)
    Dataset {
        /// Existing manifest to export instead of a toy set
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one of the three models
    Train {
        #[arg(value_enum)]
        model: Model,
        #[command(flatten)]
        args: TrainFlags,
    },
    /// Combine trained checkpoints into a pipeline bundle
    Bundle {
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        seed: PathBuf,
        #[arg(long)]
        mapper: PathBuf,
        /// Manifest providing the camera rig; defaults to the one the VAE was trained on
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate splats, seeds and renders from one image
    Generate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, env = "SEEDSPLAT_BUNDLE")]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a splat file on a ring of cameras
    Render {
        /// `.ply` or binary splat file
        #[arg(long)]
        splats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take rig and background from this bundle
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Serve the generate/edit/render loop over HTTP
    Serve {
        #[arg(long, env = "SEEDSPLAT_BUNDLE")]
        bundle: PathBuf,
        #[arg(long, env = "SEEDSPLAT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Return renders inline as base64 instead of file references
        #[arg(long)]
        inline_renders: bool,
        #[arg(long, default_value = "renders")]
        render_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Vae,
    Seed,
    Mapper,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignmentArg {
    Cluster,
    Shuffled,
}

#[derive(Args)]
struct TrainFlags {
    /// JSON training config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Frozen VAE checkpoint (seed and mapper training)
    #[arg(long)]
    vae: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed point count when no config is given
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_enum)]
    alignment: Option<AlignmentArg>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Dataset { manifest, objects, seed, out } => {
            let m = commands::dataset(manifest.as_deref(), objects, seed, &out)?;
            println!("wrote {} objects to {}", m.objects.len(), out.display());
        }
        Command::Train { model, args } => {
            let a = TrainArgs {
                config: args.config,
                manifest: args.manifest,
                vae: args.vae,
                out: args.out,
                steps: args.steps,
                seed: args.seed,
                seeds: args.seeds,
                alignment: args.alignment.map(|a| match a {
                    AlignmentArg::Cluster => Alignment::Cluster,
                    AlignmentArg::Shuffled => Alignment::Shuffled,
                }),
                resume: args.resume,
            };
            let s = match model {
                Model::Vae => commands::train_vae(&a)?,
                Model::Seed => commands::train_flow::<SeedGenerator>(&a)?,
                Model::Mapper => commands::train_flow::<SeedAnchorMapper>(&a)?,
            };
            println!(
                "{} steps, loss {:.6} -> {:.6}, checkpoint {}",
                s.steps,
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Bundle { vae, seed, mapper, manifest, out } => {
            let p = commands::bundle(&vae, &seed, &mapper, manifest.as_deref(), &out)?;
            println!("bundle {} version {}", out.display(), p.version);
        }
        Command::Generate { image, bundle, out, views, seed } => {
            let p = commands::load_bundle(&bundle)?;
            let m = commands::generate(&image, &p, &out, views, seed)?;
            println!(
                "{} seeds, {} gaussians, {} views written to {}",
                m.seed_count,
                m.gaussian_count,
                m.views,
                out.display()
            );
        }
        Command::Render { splats, out, bundle, views, size } => {
            let (mut rig, opts) = match bundle {
                Some(b) => {
                    let p = commands::load_bundle(&b)?;
                    (p.cfg.rig.clone(), p.render_options())
                }
                None => (ViewRig::default(), RenderOptions::default()),
            };
            rig.views = views;
            if let Some(s) = size {
                rig.width = s;
                rig.height = s;
            }
            let paths = commands::render(&splats, &rig, &opts, &out)?;
            println!("{} views written to {}", paths.len(), out.display());
        }
        Command::Serve {
            bundle,
            port,
            host,
            inline_renders,
            render_dir,
            capacity,
        } => {
            let p = commands::load_bundle(&bundle)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("parsing listen address")?;
            let opts = ServeOptions {
                inline_renders,
                render_dir,
                capacity,
                deterministic: cli.deterministic,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(AppState::new(p, opts), addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::INPUT_ERROR as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::exit_code(&e) as u8)
        }
    }
}
