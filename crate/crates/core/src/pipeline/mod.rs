//! Applications and evaluation: long-range generation, non-uniform prompt
//! schedules, object compositing, consistency metrics, run configuration,
//! file formats and charts.

pub mod composite;
pub mod config;
pub mod io;
pub mod long_range;
pub mod metrics;
pub mod plot;
pub mod prompts;

pub use composite::{object_composite, ObjectMask};
pub use config::RunConfig;
pub use io::{read_mask, read_video, write_mask, write_video};
pub use long_range::{generate_long_range, Chunk, GenerationPlan, LongRangeOutput, DEFAULT_CHUNK_FRAMES};
pub use metrics::{
    condition_similarity, embed_frames, metrics_csv, prompt_consistency, temporal_consistency,
    temporal_consistency_all_pairs, Embedder, StubEmbedder,
};
pub use plot::{svg_bar_chart, svg_line_chart};
pub use prompts::{build_prompt_schedule, parse_prompt_at, PromptSchedule};
