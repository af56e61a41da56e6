//! Auto-regressive long-range generation: fixed-size chunks, each
//! conditioned on the last frames of its predecessor.

use super::prompts::PromptSchedule;
use crate::dgn::GateDecision;
use crate::diffusion::{sample_video_with_context, ContextFrames, GroundedUNet, LatentVideo, NoiseSchedule, SampleConfig};
use crate::error::{Error, Result};
use crate::grounding::GroundingTrack;
use crate::numerics::ParamStore;
use crate::stgl::TextEmbedder;

pub const DEFAULT_CHUNK_FRAMES: usize = 16;

/// One chunk covering frames `[start, end)`; its first `context` frames are
/// copied from the previous chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub context: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationPlan {
    pub total: usize,
    pub chunk: usize,
    pub window: usize,
    pub chunks: Vec<Chunk>,
}

impl GenerationPlan {
    /// Chunks of `chunk` frames advancing by `chunk - window`; the last one
    /// may be shorter.
    pub fn new(total: usize, chunk: usize, window: usize) -> Result<Self> {
        if window >= chunk {
            return Err(Error::WindowTooLarge { window, chunk });
        }
        let mut chunks = Vec::new();
        let mut start = 0;
        while total > 0 {
            let end = (start + chunk).min(total);
            let context = if chunks.is_empty() { 0 } else { window };
            chunks.push(Chunk { start, end, context });
            if end == total {
                break;
            }
            start = end - window;
        }
        Self::from_chunks(total, chunk, window, chunks)
    }

    /// Validates an explicit chunk list.
    pub fn from_chunks(total: usize, chunk: usize, window: usize, chunks: Vec<Chunk>) -> Result<Self> {
        if window >= chunk {
            return Err(Error::WindowTooLarge { window, chunk });
        }
        let coverage = |msg: String| Err(Error::PlanCoverage(msg));
        let Some(first) = chunks.first() else {
            return coverage(format!("no chunks for {total} frames"));
        };
        if first.start != 0 || first.context != 0 {
            return coverage("the first chunk must start at frame 0 without context".into());
        }
        for c in &chunks {
            if c.len() > chunk || c.len() <= c.context {
                return coverage(format!("chunk [{}, {}) does not fit size {chunk} with window {}", c.start, c.end, c.context));
            }
        }
        for p in chunks.windows(2) {
            if p[1].context != window || p[1].start + window != p[0].end {
                return coverage(format!(
                    "chunks [{}, {}) and [{}, {}) do not overlap by exactly {window} frames",
                    p[0].start, p[0].end, p[1].start, p[1].end
                ));
            }
        }
        let last = chunks.last().expect("non-empty");
        if last.end != total {
            return coverage(format!("chunks end at frame {}, video has {total}", last.end));
        }
        Ok(Self {
            total,
            chunk,
            window,
            chunks,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LongRangeOutput {
    pub video: LatentVideo,
    /// Output of every chunk, before stitching.
    pub chunks: Vec<LatentVideo>,
    pub trace: Vec<GateDecision>,
}

/// Samples the plan's chunks in order. Chunk `k` uses seed `seed + k`, its
/// slice of the track and prompt table, and the previous chunk's last
/// `window` frames as replacement context. The stitched output keeps each
/// chunk's non-context frames.
#[allow(clippy::too_many_arguments)]
pub fn generate_long_range(
    model: &GroundedUNet,
    store: &ParamStore,
    schedule: &NoiseSchedule,
    track: &GroundingTrack,
    prompts: &PromptSchedule,
    plan: &GenerationPlan,
    embedder: &dyn TextEmbedder,
    config: &SampleConfig,
) -> Result<LongRangeOutput> {
    if track.num_frames != plan.total {
        return Err(Error::TrackFrames(format!(
            "track has {} frames, plan covers {}",
            track.num_frames, plan.total
        )));
    }
    if prompts.frames != plan.total {
        return Err(Error::PlanCoverage(format!(
            "prompt schedule has {} frames, plan covers {}",
            prompts.frames, plan.total
        )));
    }
    let mut outputs: Vec<LatentVideo> = Vec::with_capacity(plan.chunks.len());
    let mut trace = Vec::new();
    let mut stitched = Vec::new();
    for (k, c) in plan.chunks.iter().enumerate() {
        let context = outputs.last().map(|prev| prev.slice_frames(prev.frames - c.context, prev.frames));
        let cfg = SampleConfig {
            seed: config.seed.wrapping_add(k as u64),
            ..*config
        };
        let out = sample_video_with_context(
            model,
            store,
            schedule,
            &prompts.slice_frames(c.start, c.end),
            &track.slice_frames(c.start, c.end),
            embedder,
            &cfg,
            context.as_ref().map(|video| ContextFrames { video }),
        )?;
        let flen = out.video.frame_len();
        stitched.extend_from_slice(&out.video.data[c.context * flen..]);
        trace.extend(out.trace);
        outputs.push(out.video);
    }
    let first = &outputs[0];
    let video = LatentVideo::new(plan.total, first.channels, first.height, first.width, stitched)?;
    Ok(LongRangeOutput {
        video,
        chunks: outputs,
        trace,
    })
}
