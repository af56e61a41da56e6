//! Latent videos and object masks in the GVDM grid container.
//!
//! A latent video of `N` frames and `C` channels is stored as one
//! `W x H` grid with `C * N` channels, channel `n * C + c` holding channel
//! `c` of frame `n`. A sidecar text file `<path>.hdr` records
//! `frames`, `channels`, `height` and `width` as `key = value` lines.
//!
//! A mask is a grid with one channel per frame and values 0 or 1.

use std::path::{Path, PathBuf};

use super::composite::ObjectMask;
use crate::diffusion::LatentVideo;
use crate::error::{Error, Result};
use crate::grounding::{decode_gvdm, encode_gvdm, read_gvdm, DenseMap};

pub fn video_to_grid(video: &LatentVideo) -> DenseMap {
    let (n, c, h, w) = (video.frames, video.channels, video.height, video.width);
    let mut data = vec![0.0; n * c * h * w];
    for f in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * (c * n) + f * c + ch] = video.at(f, ch, y, x);
                }
            }
        }
    }
    DenseMap::new(w, h, c * n, data).expect("sized above")
}

pub fn grid_to_video(grid: &DenseMap, frames: usize, channels: usize) -> Result<LatentVideo> {
    if frames * channels != grid.channels {
        return Err(Error::GvdmFormat(format!(
            "grid has {} channels, header implies {frames} x {channels}",
            grid.channels
        )));
    }
    let (h, w) = (grid.height, grid.width);
    let mut video = LatentVideo::zeros(frames, channels, h, w);
    for f in 0..frames {
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    video.data[((f * channels + c) * h + y) * w + x] = grid.at(x, y, f * channels + c);
                }
            }
        }
    }
    Ok(video)
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn video_header(video: &LatentVideo) -> String {
    format!(
        "frames = {}\nchannels = {}\nheight = {}\nwidth = {}\n",
        video.frames, video.channels, video.height, video.width
    )
}

/// `(frames, channels, height, width)` from a sidecar header.
pub fn parse_video_header(text: &str) -> Result<(usize, usize, usize, usize)> {
    let mut dims = [None; 4];
    const KEYS: [&str; 4] = ["frames", "channels", "height", "width"];
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::GvdmFormat(format!("header line `{line}` is not `key = value`")))?;
        let i = KEYS
            .iter()
            .position(|name| *name == k.trim())
            .ok_or_else(|| Error::GvdmFormat(format!("unknown header key `{}`", k.trim())))?;
        dims[i] = Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::GvdmFormat(format!("header value `{}` is not a count", v.trim())))?,
        );
    }
    match dims {
        [Some(n), Some(c), Some(h), Some(w)] => Ok((n, c, h, w)),
        _ => Err(Error::GvdmFormat("header must give frames, channels, height and width".into())),
    }
}

pub fn encode_video(video: &LatentVideo) -> Vec<u8> {
    encode_gvdm(&video_to_grid(video))
}

pub fn decode_video(bytes: &[u8], header: &str) -> Result<LatentVideo> {
    let (n, c, h, w) = parse_video_header(header)?;
    let grid = decode_gvdm(bytes)?;
    if (grid.height, grid.width) != (h, w) {
        return Err(Error::GvdmFormat(format!(
            "grid is {}x{}, header says {h}x{w}",
            grid.height, grid.width
        )));
    }
    grid_to_video(&grid, n, c)
}

/// Writes the grid and its sidecar header.
pub fn write_video(path: &Path, video: &LatentVideo) -> Result<()> {
    std::fs::write(path, encode_video(video)).map_err(|e| Error::io(path, e))?;
    let hdr = header_path(path);
    std::fs::write(&hdr, video_header(video)).map_err(|e| Error::io(&hdr, e))
}

pub fn read_video(path: &Path) -> Result<LatentVideo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = header_path(path);
    let header = std::fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    decode_video(&bytes, &header)
}

pub fn mask_to_grid(mask: &ObjectMask) -> DenseMap {
    let (n, h, w) = (mask.frames, mask.height, mask.width);
    let mut data = vec![0.0; n * h * w];
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                data[(y * w + x) * n + f] = if mask.at(f, y, x) { 1.0 } else { 0.0 };
            }
        }
    }
    DenseMap::new(w, h, n, data).expect("sized above")
}

pub fn grid_to_mask(grid: &DenseMap) -> Result<ObjectMask> {
    if grid.data.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::GvdmFormat("mask values must be 0 or 1".into()));
    }
    Ok(ObjectMask::from_fn(grid.channels, grid.height, grid.width, |f, y, x| {
        grid.at(x, y, f) == 1.0
    }))
}

pub fn write_mask(path: &Path, mask: &ObjectMask) -> Result<()> {
    std::fs::write(path, encode_gvdm(&mask_to_grid(mask))).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<ObjectMask> {
    grid_to_mask(&read_gvdm(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_layout() {
        let mut v = LatentVideo::zeros(2, 3, 1, 2);
        for (i, x) in v.data.iter_mut().enumerate() {
            *x = i as f64;
        }
        let g = video_to_grid(&v);
        assert_eq!(g.channels, 6);
        // Frame 1, channel 2, pixel (x=1, y=0).
        assert_eq!(g.at(1, 0, 5), v.at(1, 2, 0, 1));
        assert_eq!(grid_to_video(&g, 2, 3).unwrap(), v);
        assert_eq!(grid_to_video(&g, 4, 3).unwrap_err().code(), "gvdm-format");
    }

    #[test]
    fn headers() {
        assert_eq!(parse_video_header("width = 4\nframes=2\nchannels = 1\nheight = 3\n").unwrap(), (2, 1, 3, 4));
        for bad in ["frames = 2", "frames = x\nchannels=1\nheight=1\nwidth=1", "depth = 1", "frames 2"] {
            assert_eq!(parse_video_header(bad).unwrap_err().code(), "gvdm-format");
        }
    }

    #[test]
    fn masks_must_be_binary() {
        let g = DenseMap::new(1, 1, 2, vec![1.0, 0.5]).unwrap();
        assert_eq!(grid_to_mask(&g).unwrap_err().code(), "gvdm-format");
        let m = ObjectMask::from_fn(3, 2, 2, |f, y, x| (f + y + x) % 2 == 0);
        assert_eq!(grid_to_mask(&mask_to_grid(&m)).unwrap(), m);
    }
}
