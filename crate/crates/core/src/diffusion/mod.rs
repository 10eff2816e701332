//! Pose-conditioned diffusion generator: noise schedule, three-branch
//! conditioning, the noise-matching training step and guided sampling.

mod checkpoint;
mod conditions;
mod guidance;
mod network;
mod sampler;
mod schedule;
mod training;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use conditions::{
    assemble_conditions, indicator_from_mask, random_mask, BranchKeep, ConditionBundle,
    NEUTRAL_FILL,
};
pub use guidance::{cfg_predict, GeneratorTrainer, NoisePredictor, TrainableDenoiser, ZeroPredictor};
pub use network::{
    timestep_encoding, ConvStack, EncoderSet, Generator, GeneratorConfig, Mlp, SemanticEncoder,
    IMAGE_CHANNELS, SEMANTIC_FEATURES,
};
pub use sampler::{image_rng, sample, sample_many, sample_tensor, timesteps, SamplerConfig};
pub use schedule::{forward_noise, NoiseSchedule, ScheduleConfig};
pub use training::{
    batch_loss, draw_noise, training_step, training_step_with, NoiseDraw, TrainExample,
    DEFAULT_DROP_PROB,
};
