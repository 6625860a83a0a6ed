//! Residual blocks, the staged classifier, cost accounting and checkpoints.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod model;

pub use blocks::{
    c_resblock, classify, embedding_forward, inv_resblock, residual_block, stage_forward, BnRunning, FcBn, HeadParams,
    NormState, StageMode, StageOutput, StageParams,
};
pub use checkpoint::{
    config_digest, load_checkpoint, read_checkpoint, save_checkpoint, stored_dtype, write_checkpoint,
};
pub use config::{hidden_width, BlockConfig, BlockKind, ModelConfig, StageConfig, DEFAULT_K};
pub use cost::{count_params_flops, CostReport};
pub use model::{ForwardPass, Layout, NamedTensor, Phase, PointNormNet};
