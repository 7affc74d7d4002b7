//! Small reverse-mode tensor engine covering the layers the wind models use.

pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use graph::{mse_value, BatchStats, Gradients, Graph, NodeId};
pub use layers::{positional_embedding, AttentionWeights, BatchNorm, Dense, BN_EPS, BN_MOMENTUM};
pub use params::{glorot_uniform, load_weights, save_weights, Param, ParamId, ParamStore, WeightManifest};
pub use tensor::Tensor;
