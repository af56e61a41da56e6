//! Dynamic gate network: per-layer relevance from grounded tokens, the
//! Logistic-noise soft/hard dual gate, and skip statistics.

pub mod gate;
pub mod stats;

pub use gate::{
    gate_from_noise, low_rank_width, relevance, relevance_backward, sample_gate, GateDecision, GateMode,
    GateNoise, GateParams, RelevanceCache, RelevanceOp, SoftGateOp,
};
pub use stats::{collect_skip_stats, LayerSkip, SkipReport};
