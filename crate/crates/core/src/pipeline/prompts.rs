//! Non-uniform sequential prompts: captions pinned to keyframes and
//! linearly interpolated in embedding space between them.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::stgl::{encode_prompt, TextEmbedder};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSchedule {
    /// `(frame, caption)`, strictly increasing frames, the first at 0.
    pub keyframes: Vec<(usize, String)>,
    pub frames: usize,
    pub tokens: usize,
    /// `[frames * tokens, width]`; frame `j` owns rows `j*tokens..(j+1)*tokens`.
    pub table: Tensor,
}

impl PromptSchedule {
    /// The `[tokens, width]` block of frame `j`.
    pub fn frame(&self, j: usize) -> &[f64] {
        let w = self.table.cols();
        &self.table.data()[j * self.tokens * w..(j + 1) * self.tokens * w]
    }

    /// Rows of frames `[start, end)` as a standalone table.
    pub fn slice_frames(&self, start: usize, end: usize) -> Tensor {
        let w = self.table.cols();
        let data = self.table.data()[start * self.tokens * w..end * self.tokens * w].to_vec();
        Tensor::matrix((end - start) * self.tokens, w, data).expect("slice of a valid table")
    }
}

/// Frame `j` between keyframes `a < b` receives `(1 - w) e_a + w e_b` with
/// `w = (j - a) / (b - a)`; keyframe rows are copied verbatim and frames
/// after the last keyframe repeat it.
pub fn build_prompt_schedule(
    keyframes: &[(usize, String)],
    embedder: &dyn TextEmbedder,
    frames: usize,
    tokens: usize,
) -> Result<PromptSchedule> {
    let first = keyframes
        .first()
        .ok_or_else(|| Error::ScheduleStart("a schedule needs at least one keyframe".into()))?;
    if first.0 != 0 {
        return Err(Error::ScheduleStart(format!("first keyframe must be at frame 0, got {}", first.0)));
    }
    if keyframes.windows(2).any(|p| p[1].0 <= p[0].0) {
        return Err(Error::ScheduleOrder);
    }
    let embeds: Vec<Tensor> = keyframes.iter().map(|(_, t)| encode_prompt(embedder, t, tokens)).collect();
    let block = tokens * embedder.width();
    let mut data = Vec::with_capacity(frames * block);
    for j in 0..frames {
        // Last keyframe at or before j.
        let k = keyframes.partition_point(|(f, _)| *f <= j) - 1;
        let (a, ea) = (keyframes[k].0, embeds[k].data());
        if j == a || k + 1 == keyframes.len() {
            data.extend_from_slice(ea);
            continue;
        }
        let (b, eb) = (keyframes[k + 1].0, embeds[k + 1].data());
        let w = (j - a) as f64 / (b - a) as f64;
        data.extend(ea.iter().zip(eb).map(|(x, y)| (1.0 - w) * x + w * y));
    }
    Ok(PromptSchedule {
        keyframes: keyframes.to_vec(),
        frames,
        tokens,
        table: Tensor::matrix(frames * tokens, embedder.width(), data)?,
    })
}

/// Parses `FRAME:TEXT`.
pub fn parse_prompt_at(arg: &str) -> Result<(usize, String)> {
    let (frame, text) = arg.split_once(':').ok_or_else(|| Error::Config {
        key: "prompt-at".into(),
        msg: format!("expected FRAME:TEXT, got `{arg}`"),
    })?;
    let frame = frame.trim().parse().map_err(|_| Error::Config {
        key: "prompt-at".into(),
        msg: format!("`{frame}` is not a frame index"),
    })?;
    Ok((frame, text.to_string()))
}
