//! Consistency metrics over a pluggable embedder, scored as 100 times a
//! mean cosine similarity.

use std::thread;

use crate::diffusion::LatentVideo;
use crate::error::{Error, Result};
use crate::grounding::{frame_grounding_map, GroundingConfig, GroundingTrack};
use crate::numerics::tensor::{cosine, norm};
use crate::numerics::RngStream;

/// Maps frames and captions into a shared vector space. Implementations
/// must be deterministic and return unit-norm vectors.
pub trait Embedder: Sync {
    fn embed_frame(&self, frame: &[f64]) -> Vec<f64>;
    fn embed_text(&self, text: &str) -> Vec<f64>;
}

/// Deterministic stand-in: frames go through a seeded Gaussian random
/// projection, captions through a seeded per-string Gaussian draw; both
/// are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub seed: u64,
    pub dim: usize,
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl Embedder for StubEmbedder {
    fn embed_frame(&self, frame: &[f64]) -> Vec<f64> {
        let mut rng = RngStream::new(self.seed, &format!("frame-projection:{}", frame.len()));
        let out = (0..self.dim)
            .map(|_| frame.iter().map(|x| x * rng.normal()).sum())
            .collect();
        unit(out)
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        unit(RngStream::new(self.seed, &format!("caption:{text}")).normals(self.dim))
    }
}

/// Frame embeddings in frame order, computed on scoped worker threads.
pub fn embed_frames(video: &LatentVideo, embedder: &dyn Embedder) -> Vec<Vec<f64>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(video.frames.max(1));
    let per = video.frames.div_ceil(workers.max(1)).max(1);
    let frames: Vec<usize> = (0..video.frames).collect();
    thread::scope(|s| {
        let handles: Vec<_> = frames
            .chunks(per)
            .map(|idx| s.spawn(move || idx.iter().map(|&n| embedder.embed_frame(video.frame(n))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("embedding worker")).collect()
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `100 * mean_j cos(e_j, e_{j+1})` over adjacent frames.
pub fn temporal_consistency(video: &LatentVideo, embedder: &dyn Embedder) -> Result<f64> {
    if video.frames < 2 {
        return Err(Error::TcFrames(video.frames));
    }
    let e = embed_frames(video, embedder);
    Ok(100.0 * mean(&e.windows(2).map(|p| cosine(&p[0], &p[1])).collect::<Vec<_>>()))
}

/// `100 * mean cos(e_i, e_j)` over all unordered frame pairs `i < j`.
pub fn temporal_consistency_all_pairs(video: &LatentVideo, embedder: &dyn Embedder) -> Result<f64> {
    if video.frames < 2 {
        return Err(Error::TcFrames(video.frames));
    }
    let e = embed_frames(video, embedder);
    let mut sims = Vec::new();
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            sims.push(cosine(&e[i], &e[j]));
        }
    }
    Ok(100.0 * mean(&sims))
}

/// `100 * mean_j cos(embed_frame(frame_j), embed_text(prompt))`.
pub fn prompt_consistency(video: &LatentVideo, prompt: &str, embedder: &dyn Embedder) -> Result<f64> {
    if video.frames == 0 {
        return Err(Error::TensorShape("prompt consistency of an empty video".into()));
    }
    let text = embedder.embed_text(prompt);
    let e = embed_frames(video, embedder);
    Ok(100.0 * mean(&e.iter().map(|f| cosine(f, &text)).collect::<Vec<_>>()))
}

/// `100 * mean_j cos(map_j(source), map_j(generated))` over per-frame
/// grounding maps rendered at `width x height`. Two all-zero maps count as
/// identical.
pub fn condition_similarity(
    source: &GroundingTrack,
    generated: &GroundingTrack,
    width: usize,
    height: usize,
    config: &GroundingConfig,
) -> Result<f64> {
    if source.num_frames != generated.num_frames {
        return Err(Error::CondFrames(source.num_frames, generated.num_frames));
    }
    let mut sims = Vec::with_capacity(source.num_frames);
    for j in 0..source.num_frames {
        let a = frame_grounding_map(source, j, width, height, config)?;
        let b = frame_grounding_map(generated, j, width, height, config)?;
        let both_zero = a.data.iter().all(|v| *v == 0.0) && b.data.iter().all(|v| *v == 0.0);
        sims.push(if both_zero { 1.0 } else { cosine(&a.data, &b.data) });
    }
    Ok(100.0 * mean(&sims))
}

/// `metric,value` CSV, one row per entry in order.
pub fn metrics_csv(rows: &[(&str, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in rows {
        out.push_str(&format!("{name},{value}\n"));
    }
    out
}
