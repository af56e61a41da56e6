//! Synthetic grounded videos and clip sampling.

use super::video::LatentVideo;
use crate::error::{Error, Result};
use crate::grounding::{BoundingBox, Condition, GroundingTrack, TrackObject};
use crate::numerics::RngStream;

pub const DEFAULT_CLIP_FRAMES: usize = 16;
pub const DEFAULT_CLIP_STRIDE: usize = 4;

const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
const SHAPES: [&str; 3] = ["ball", "cube", "kite"];

/// A synthetic clip: one Gaussian blob moving on a straight line, its box
/// track and a short caption.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub video: LatentVideo,
    pub track: GroundingTrack,
    pub caption: String,
    pub phrase: String,
}

pub fn synthetic_clip(seed: u64, frames: usize, channels: usize, height: usize, width: usize) -> SyntheticClip {
    let mut rng = RngStream::new(seed, "synthetic");
    let sigma = 0.08 + 0.04 * rng.uniform();
    let margin = 2.0 * sigma;
    let span = 1.0 - 2.0 * margin;
    let start = (margin + span * rng.uniform(), margin + span * rng.uniform());
    let end = (margin + span * rng.uniform(), margin + span * rng.uniform());
    let amplitude: Vec<f64> = (0..channels).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    let offset: Vec<f64> = (0..channels).map(|_| 0.2 * (rng.uniform() - 0.5)).collect();
    let color = COLORS[rng.int_inclusive(0, COLORS.len() - 1)];
    let shape = SHAPES[rng.int_inclusive(0, SHAPES.len() - 1)];

    let mut data = Vec::with_capacity(frames * channels * height * width);
    let mut conditions = Vec::with_capacity(frames);
    for n in 0..frames {
        let s = if frames > 1 { n as f64 / (frames - 1) as f64 } else { 0.0 };
        let cx = start.0 + s * (end.0 - start.0);
        let cy = start.1 + s * (end.1 - start.1);
        for c in 0..channels {
            for y in 0..height {
                let v = (y as f64 + 0.5) / height as f64;
                for x in 0..width {
                    let u = (x as f64 + 0.5) / width as f64;
                    let r2 = (u - cx).powi(2) + (v - cy).powi(2);
                    data.push(offset[c] + amplitude[c] * (-r2 / (2.0 * sigma * sigma)).exp());
                }
            }
        }
        let b = BoundingBox::new(
            (cx - margin).max(0.0),
            (cy - margin).max(0.0),
            (cx + margin).min(1.0),
            (cy + margin).min(1.0),
        )
        .expect("blob box lies inside the frame");
        conditions.push(Some(Condition::Box(b)));
    }
    let phrase = format!("{color} {shape}");
    let track = GroundingTrack::new(
        frames,
        vec![TrackObject {
            phrase: phrase.clone(),
            conditions,
        }],
    )
    .expect("synthetic track is valid");
    SyntheticClip {
        video: LatentVideo::new(frames, channels, height, width, data).expect("sized above"),
        track,
        caption: format!("a {phrase} moving"),
        phrase,
    }
}

/// Frame indices `start + k * stride` of a `clip_frames`-frame clip with a
/// random start.
pub fn clip_indices(total: usize, clip_frames: usize, stride: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if clip_frames == 0 || stride == 0 {
        return Err(Error::TensorShape("clip length and stride must be positive".into()));
    }
    let span = (clip_frames - 1) * stride + 1;
    if span > total {
        return Err(Error::TensorShape(format!(
            "a {clip_frames}-frame clip at stride {stride} spans {span} frames, video has {total}"
        )));
    }
    let start = rng.int_inclusive(0, total - span);
    Ok((0..clip_frames).map(|k| start + k * stride).collect())
}

/// The frames at `indices` of a video and its track.
pub fn gather_clip(video: &LatentVideo, track: &GroundingTrack, indices: &[usize]) -> (LatentVideo, GroundingTrack) {
    let mut data = Vec::with_capacity(indices.len() * video.frame_len());
    for &i in indices {
        data.extend_from_slice(video.frame(i));
    }
    let v = LatentVideo::new(indices.len(), video.channels, video.height, video.width, data).expect("sized");
    let mut t = track.clone();
    t.num_frames = indices.len();
    for o in &mut t.objects {
        o.conditions = indices.iter().map(|&i| o.conditions[i]).collect();
    }
    t.dense_paths = indices.iter().map(|&i| track.dense_paths[i].clone()).collect();
    t.dense_maps = indices.iter().map(|&i| track.dense_maps[i].clone()).collect();
    (v, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_sampling_contract() {
        let mut rng = RngStream::new(1, "clips");
        for _ in 0..20 {
            let idx = clip_indices(80, DEFAULT_CLIP_FRAMES, DEFAULT_CLIP_STRIDE, &mut rng).unwrap();
            assert_eq!(idx.len(), 16);
            assert!(idx.windows(2).all(|w| w[1] - w[0] == 4));
            assert!(*idx.last().unwrap() < 80);
        }
        assert!(clip_indices(60, 16, 4, &mut rng).is_err());
    }

    #[test]
    fn synthetic_clip_is_consistent() {
        let c = synthetic_clip(3, 8, 4, 16, 16);
        assert_eq!(c.video.data.len(), 8 * 4 * 256);
        assert!(c.video.is_finite());
        c.track.validate().unwrap();
        let (v, t) = gather_clip(&c.video, &c.track, &[1, 5]);
        assert_eq!((v.frames, t.num_frames), (2, 2));
        assert_eq!(v.frame(1), c.video.frame(5));
    }
}
