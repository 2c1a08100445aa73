//! Part-aware denoising transformer: composite attention mask, layer stack,
//! token/position/timestep embedding and checkpoints.

mod checkpoint;
mod config;
mod mask;
mod model;

pub use checkpoint::Checkpoint;
pub use config::{CleanCondition, ConditionVariant, ModelConfig};
pub use mask::{build_sample_mask, build_train_mask, BlockSlot, CompositeMask, MaskMode};
pub use model::{
    part_aware_block_forward, timestep_features, train_layout, AttnParams, PartAwareBlockParams,
    PartDiffusionModel,
};
