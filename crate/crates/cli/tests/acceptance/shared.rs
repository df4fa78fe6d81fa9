//! Expensive artifacts shared between criteria, built once on first use.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use seedsplat::data::DatasetManifest;
use seedsplat::flow::{
    build_pairs, Alignment, FlowRunConfig, FlowTrainConfig, FlowTrainer, MapperConfig, PairRecord, SeedAnchorMapper,
    SeedGenConfig, SeedGenerator,
};
use seedsplat::nn::{AdamWConfig, Graph, ParamStore, Var};
use seedsplat::pipeline::Pipeline;
use seedsplat::rng::{self, Rng};
use seedsplat::vae::{LossBreakdown, VaeTrainConfig, VaeTrainer};

pub const VAE_STEPS: usize = 1000;
pub const SEEDS: usize = 16;
pub const FLOW_STEPS: usize = 300;

pub fn normal_mat(r: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), rng::normal_vec(r, rows * cols)).unwrap()
}

/// Adds `scale`·N(0, 1) to every parameter, so zero-initialised heads carry gradient.
pub fn perturb(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut r = rng::stream(seed, 0xacc, 0);
    for v in store.values_mut() {
        v.mapv_inplace(|e| e + scale * rng::normal(&mut r));
    }
}

/// `Σ out ⊙ W` for a fixed random `W` of matching shape.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let (n, d) = g.shape(out);
    let w = g.constant(normal_mat(&mut rng::stream(seed, 0x9e0, 0), n, d));
    let m = g.mul(out, w);
    g.sum(m)
}

pub struct VaeRun {
    pub trainer: VaeTrainer,
    pub before: LossBreakdown,
    pub after: LossBreakdown,
    pub elapsed: Duration,
}

/// Default VAE trained on four toy objects with the default rig.
pub fn vae_run() -> &'static VaeRun {
    static RUN: OnceLock<VaeRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = VaeTrainConfig {
            steps: VAE_STEPS,
            ..VaeTrainConfig::default()
        };
        let mut trainer = VaeTrainer::new(cfg, &DatasetManifest::toy(4, 0)).unwrap();
        let before = trainer.evaluate().unwrap();
        for _ in 0..VAE_STEPS {
            trainer.train_step().unwrap();
        }
        let after = trainer.evaluate().unwrap();
        VaeRun {
            trainer,
            before,
            after,
            elapsed: start.elapsed(),
        }
    })
}

pub fn pairs() -> &'static Vec<PairRecord> {
    static PAIRS: OnceLock<Vec<PairRecord>> = OnceLock::new();
    PAIRS.get_or_init(|| {
        let t = &vae_run().trainer;
        build_pairs(&t.model, &t.objects, SEEDS).unwrap()
    })
}

pub fn flow_train(seed: u64) -> FlowTrainConfig {
    FlowTrainConfig {
        optimizer: AdamWConfig {
            lr: 1e-3,
            min_lr: 1e-4,
            warmup_steps: 10,
            total_steps: FLOW_STEPS,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        steps: FLOW_STEPS,
        seed,
        ..FlowTrainConfig::default()
    }
}

pub fn mapper_trainer(alignment: Alignment, seed: u64) -> FlowTrainer<SeedAnchorMapper> {
    let mut model = MapperConfig::for_vae(&vae_run().trainer.model.cfg, SEEDS);
    model.alignment = alignment;
    FlowTrainer::new(
        FlowRunConfig {
            model,
            train: flow_train(seed),
        },
        pairs().clone(),
    )
    .unwrap()
}

pub struct AblationRun {
    /// Per seed: (cluster, shuffled) evaluation losses after training.
    pub losses: Vec<(f64, f64)>,
    pub cluster_mapper: SeedAnchorMapper,
}

pub const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

pub fn ablation_run() -> &'static AblationRun {
    static RUN: OnceLock<AblationRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut losses = Vec::new();
        let mut cluster_mapper = None;
        for seed in ABLATION_SEEDS {
            let mut pair = [0.0; 2];
            for (k, a) in [Alignment::Cluster, Alignment::Shuffled].into_iter().enumerate() {
                let mut t = mapper_trainer(a, seed);
                for _ in 0..FLOW_STEPS {
                    t.train_step().unwrap();
                }
                pair[k] = t.evaluate().unwrap();
                if a == Alignment::Cluster && cluster_mapper.is_none() {
                    cluster_mapper = Some(t.model);
                }
            }
            losses.push((pair[0], pair[1]));
        }
        AblationRun {
            losses,
            cluster_mapper: cluster_mapper.unwrap(),
        }
    })
}

/// Full pipeline from the trained VAE, the cluster-aligned mapper and a
/// briefly trained seed generator.
pub fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let vae = &vae_run().trainer.model;
        let mut seeds = FlowTrainer::<SeedGenerator>::new(
            FlowRunConfig {
                model: SeedGenConfig::for_vae(&vae.cfg),
                train: flow_train(0),
            },
            pairs().clone(),
        )
        .unwrap();
        for _ in 0..FLOW_STEPS {
            seeds.train_step().unwrap();
        }
        let m = DatasetManifest::toy(4, 0);
        Pipeline::from_parts(m.rig, m.background, vae.clone(), seeds.model, ablation_run().cluster_mapper.clone()).unwrap()
    })
}

/// Ground-truth input view of the first training object.
pub fn input_image() -> seedsplat::render::RenderedImage {
    let t = &vae_run().trainer;
    t.objects[0].input().0.clone()
}
