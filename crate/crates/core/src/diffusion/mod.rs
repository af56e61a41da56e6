//! Noise schedule, Grounded-UNet, staged training, guided DDIM sampling and
//! checkpoints.

pub mod checkpoint;
pub mod data;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod unet;
pub mod video;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_bytes, save_checkpoint, GVCK_MAGIC,
    GVCK_VERSION,
};
pub use data::{clip_indices, gather_clip, synthetic_clip, SyntheticClip, DEFAULT_CLIP_FRAMES, DEFAULT_CLIP_STRIDE};
pub use sample::{
    cfg_predict, sample_video, sample_video_with_context, uniform_prompt_table, ContextFrames, SampleConfig,
    SampleOutput,
};
pub use schedule::{
    add_noise, cfg_combine, ddim_step, ddim_timesteps, linear_beta_schedule, NoiseSchedule, DEFAULT_GUIDANCE_SCALE,
    DEFAULT_SAMPLING_STEPS,
};
pub use train::{evaluation_loss, training_step, Stage, StageMask, TrainConfig, TrainItem, TrainState};
pub use unet::{
    unet_forward, Conditioning, ForwardOptions, GatePolicy, GroundedUNet, UNetCache, UNetConfig, UNetOutput,
    GATED_LAYERS, LAYER_NAMES,
};
pub use video::LatentVideo;
