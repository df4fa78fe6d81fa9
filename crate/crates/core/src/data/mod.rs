//! Procedural training data: analytic shapes with color fields, camera rigs,
//! ground-truth renders and the convolutional image encoder.

mod dataset;
mod encoder;
mod rig;
mod shapes;

pub use dataset::{DatasetManifest, ObjectEntry, ObjectSample};
pub use encoder::{feature_sampler, project_to_image, FeatureMaps, ImageEncoder, ImageEncoderConfig, ImageFeatures};
pub use rig::{ground_truth_splats, render_ground_truth, ViewRig, GT_SPLAT_COUNT, GT_SPLAT_RADIUS};
pub use shapes::{sample_surface, ColorField, Shape, SyntheticObject};
