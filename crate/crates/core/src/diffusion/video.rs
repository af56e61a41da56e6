//! Latent videos and their token layout.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `frames x channels x height x width`, stored in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentVideo {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::TensorShape(format!(
                "{} values for a {frames}x{channels}x{height}x{width} video",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
            data: vec![0.0; frames * channels * height * width],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn same_shape(&self, other: &LatentVideo) -> bool {
        (self.frames, self.channels, self.height, self.width)
            == (other.frames, other.channels, other.height, other.width)
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        let l = self.frame_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f64] {
        let l = self.frame_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.channels + c) * self.height + y) * self.width + x]
    }

    /// Frames `start..end` as a new video.
    pub fn slice_frames(&self, start: usize, end: usize) -> LatentVideo {
        let l = self.frame_len();
        LatentVideo {
            frames: end - start,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[start * l..end * l].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Token matrix `[frames * height * width, channels]`, frame major and
    /// row-major within a frame.
    pub fn to_tokens(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut out = Tensor::zeros(&[self.frames * hw, self.channels]);
        for n in 0..self.frames {
            for c in 0..self.channels {
                let plane = &self.data[(n * self.channels + c) * hw..(n * self.channels + c + 1) * hw];
                for (p, v) in plane.iter().enumerate() {
                    out.row_mut(n * hw + p)[c] = *v;
                }
            }
        }
        out
    }

    /// Inverse of [`LatentVideo::to_tokens`].
    pub fn from_tokens(tokens: &Tensor, frames: usize, height: usize, width: usize) -> Result<Self> {
        let hw = height * width;
        if tokens.rows() != frames * hw {
            return Err(Error::TensorShape(format!(
                "{} token rows for {frames} frames of {height}x{width}",
                tokens.rows()
            )));
        }
        let channels = tokens.cols();
        let mut data = vec![0.0; frames * channels * hw];
        for n in 0..frames {
            for p in 0..hw {
                for (c, v) in tokens.row(n * hw + p).iter().enumerate() {
                    data[(n * channels + c) * hw + p] = *v;
                }
            }
        }
        LatentVideo::new(frames, channels, height, width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_round_trip_and_layout() {
        let v = LatentVideo::new(2, 3, 2, 2, (0..24).map(f64::from).collect()).unwrap();
        let t = v.to_tokens();
        assert_eq!(t.shape(), &[8, 3]);
        assert_eq!(t.row(5), &[v.at(1, 0, 0, 1), v.at(1, 1, 0, 1), v.at(1, 2, 0, 1)]);
        assert_eq!(LatentVideo::from_tokens(&t, 2, 2, 2).unwrap(), v);
        assert_eq!(v.slice_frames(1, 2).data, v.frame(1));
    }
}
