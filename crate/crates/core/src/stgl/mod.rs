//! Spatial-temporal grounding layer: grounded-token encoding and smoothing,
//! grounding-biased self-attention, gated grounding attention with token
//! selection, cross-attention and frame temporal attention.

pub mod block;
pub mod embedder;
pub mod grounded;

pub use block::{stgl_block_forward, BlockCache, BlockConfig, BlockGrads, BlockInput, StgaGradOp, StglBlock};
pub use embedder::{encode_prompt, HashTextEmbedder, TextEmbedder, PAD_TOKEN};
pub use grounded::{
    encode_grounded_features, temporal_attend_grounded, EncoderCache, GroundedEncoder, GroundedFeature,
    GroundedTemporal, GroundedTemporalCache,
};
