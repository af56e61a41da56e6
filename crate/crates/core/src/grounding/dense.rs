//! Dense conditions: blur-based densification and the GVDM grid container.
//!
//! GVDM layout (all little-endian):
//!
//! ```text
//! b"GVDM" | width: u32 | height: u32 | channels: u32 | width*height*channels x f32
//! ```
//!
//! Values are row-major with the channel index varying fastest.

use std::path::Path;

use super::types::{DenseMap, GroundingMap, Normalization};
use crate::error::{Error, Result};
use crate::numerics::gaussian_blur_2d;

pub const GVDM_MAGIC: &[u8; 4] = b"GVDM";

/// Channel-mean, blur, then peak-normalize. All-zero input stays all-zero.
pub fn densify(dense: &DenseMap, sigma: f64, radius: usize) -> Result<GroundingMap> {
    let mean = dense.channel_mean();
    let blurred = gaussian_blur_2d(&mean, dense.width, dense.height, sigma, radius)?;
    Ok(GroundingMap {
        width: dense.width,
        height: dense.height,
        data: blurred,
        normalization: Normalization::Raw,
    }
    .peak_normalized())
}

pub fn encode_gvdm(map: &DenseMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * map.data.len());
    out.extend_from_slice(GVDM_MAGIC);
    for d in [map.width, map.height, map.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_gvdm(bytes: &[u8]) -> Result<DenseMap> {
    if bytes.len() < 16 {
        return Err(Error::GvdmFormat(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != GVDM_MAGIC {
        return Err(Error::GvdmFormat("bad magic, expected GVDM".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (width, height, channels) = (dim(0), dim(1), dim(2));
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::GvdmFormat("dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != count * 4 {
        return Err(Error::GvdmFormat(format!(
            "payload has {} bytes, header implies {}",
            body.len(),
            count * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DenseMap::new(width, height, channels, data)
}

pub fn read_gvdm(path: &Path) -> Result<DenseMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gvdm(&bytes)
}

pub fn write_gvdm(path: &Path, map: &DenseMap) -> Result<()> {
    std::fs::write(path, encode_gvdm(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densify_examples() {
        let zero = DenseMap::new(6, 5, 2, vec![0.0; 60]).unwrap();
        assert!(densify(&zero, 1.0, 2).unwrap().data.iter().all(|v| *v == 0.0));

        let constant = DenseMap::new(7, 4, 1, vec![0.3; 28]).unwrap();
        for v in densify(&constant, 1.2, 3).unwrap().data {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let mut impulse = DenseMap::new(15, 15, 1, vec![0.0; 225]).unwrap();
        impulse.data[7 * 15 + 7] = 4.0;
        let m = densify(&impulse, 1.0, 3).unwrap();
        assert_eq!(m.max(), 1.0);
        assert_eq!(m.at(7, 7), 1.0);
    }

    #[test]
    fn multichannel_is_averaged() {
        let d = DenseMap::new(1, 1, 3, vec![1.0, 2.0, 6.0]).unwrap();
        assert_eq!(d.channel_mean(), vec![3.0]);
    }

    #[test]
    fn gvdm_layout_is_exact() {
        let d = DenseMap::new(2, 1, 1, vec![1.0, -2.5]).unwrap();
        let bytes = encode_gvdm(&d);
        assert_eq!(&bytes[..4], b"GVDM");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(decode_gvdm(&bytes).unwrap(), d);
    }

    #[test]
    fn gvdm_rejects_malformed() {
        assert_eq!(decode_gvdm(b"GVD").unwrap_err().code(), "gvdm-format");
        let mut bytes = encode_gvdm(&DenseMap::new(2, 2, 1, vec![0.0; 4]).unwrap());
        bytes[0] = b'X';
        assert_eq!(decode_gvdm(&bytes).unwrap_err().code(), "gvdm-format");
        bytes[0] = b'G';
        bytes.pop();
        assert_eq!(decode_gvdm(&bytes).unwrap_err().code(), "gvdm-format");
    }
}
