//! Turning grounding maps into additive self-attention logit biases.

use super::types::GroundingMap;
use crate::error::{Error, Result};

/// Area-weighted resampling: each target cell averages the source cells it
/// overlaps, weighted by overlap area. Exact block means for integer factors.
pub fn resample_area(map: &GroundingMap, width: usize, height: usize) -> Result<GroundingMap> {
    if width == 0 || height == 0 {
        return Err(Error::BiasShape(width, height));
    }
    if width == map.width && height == map.height {
        return Ok(map.clone());
    }
    let wx = overlap_weights(map.width, width);
    let wy = overlap_weights(map.height, height);
    let mut data = vec![0.0; width * height];
    for (ty, row_w) in wy.iter().enumerate() {
        for (tx, col_w) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, fy) in row_w {
                for &(sx, fx) in col_w {
                    acc += fy * fx * map.data[sy * map.width + sx];
                }
            }
            data[ty * width + tx] = acc;
        }
    }
    Ok(GroundingMap {
        width,
        height,
        data,
        normalization: map.normalization,
    })
}

/// For each target cell along one axis, the source cells it overlaps and
/// their fractional weights (summing to 1).
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units where the axis has length src * dst so all boundaries are integers.
    (0..dst)
        .map(|t| {
            let (lo, hi) = (t * src, (t + 1) * src);
            let mut out = Vec::new();
            for s in lo / dst..=((hi - 1) / dst) {
                let (slo, shi) = (s * dst, (s + 1) * dst);
                let overlap = hi.min(shi) - lo.max(slo);
                if overlap > 0 {
                    out.push((s, overlap as f64 / src as f64));
                }
            }
            out
        })
        .collect()
}

/// Key-broadcast bias `lambda * map[k]` at the layer's spatial resolution,
/// flattened row-major.
pub fn map_to_attention_bias(
    map: &GroundingMap,
    target_width: usize,
    target_height: usize,
    scale: f64,
) -> Result<Vec<f64>> {
    let resized = resample_area(map, target_width, target_height)?;
    Ok(resized.data.iter().map(|v| scale * v).collect())
}
