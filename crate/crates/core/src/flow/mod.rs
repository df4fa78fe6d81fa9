//! Rectified flows: the shared sampler and objective, the seed generator and
//! the seed-to-anchor mapper.

mod mapper;
mod net;
mod ode;
mod pairs;
mod seed;
mod toy;
mod train;

pub use mapper::{aligned_start, Alignment, MappedAnchors, MapperConfig, SeedAnchorMapper, MAPPER_KIND};
pub use net::{pool_map, FlowCond, FlowNet, FlowNetConfig, PointwiseFlowNet};
pub use ode::{cfm_loss, cfm_loss_var, interpolate_xt, sample_ode, NoiseAugSchedule, VelocityField};
pub use pairs::{build_pair, build_pairs, dimension_align, load_pairs, save_pairs, PairRecord};
pub use seed::{SeedGenConfig, SeedGenerator, BOX_HALF, SEED_KIND};
pub use toy::{train_gaussian_flow, GaussianFlowReport, GaussianFlowSetup};
pub use train::{flow_metrics_header, write_flow_metrics_row, FlowRunConfig, FlowTask, FlowTrainConfig, FlowTrainer};
