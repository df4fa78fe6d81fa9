//! Autodiff engine and transformer building blocks.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod posenc;
pub mod sample;

pub use graph::{CustomOp, Gradients, Graph, SparseRows, Var};
pub use layers::{
    AdaLn, Attention, FeedForward, LayerNorm, Linear, TimestepEmbedder, TransformerBlock,
    TransformerBlockConfig,
};
pub use optim::{sum_gradients, AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use posenc::{pos_encode, PositionalEncodingConfig};
pub use sample::{bilinear_sample, bilinear_weights};
