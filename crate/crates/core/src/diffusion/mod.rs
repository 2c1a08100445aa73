//! Absorbing-state masked diffusion over token blocks: forward masking,
//! weighted loss, optimizer, training step and the part-by-part sampler.

mod loss;
mod optim;
mod sampler;
mod schedule;
mod train;

pub use loss::{diffusion_loss, diffusion_loss_graph, LossBreakdown, TrainBatchView};
pub use optim::{grad_norm, AdamW, AdamWConfig, LrSchedule};
pub use sampler::{
    sample, sample_traced, sequence_log_likelihood, CommitRule, Denoiser, LikelihoodDraw,
    LikelihoodEstimate, OracleDenoiser, SampleOutput, SamplerConfig,
};
pub use schedule::{forward_mask, NoiseSchedule, ScheduleKind};
pub use train::{evaluate_loss, make_view, sample_loss_graph, train_step, StepReport, TrainSample};
