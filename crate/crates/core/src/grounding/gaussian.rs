//! Uncertainty maps: each sparse condition becomes a 2-D Gaussian density.

use super::dense::densify;
use super::types::{Condition, GaussianParams, GroundingMap, GroundingTrack, Normalization};
use crate::error::{Error, Result};

/// Spread assigned to keypoints, in normalized units.
pub const DEFAULT_KEYPOINT_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingConfig {
    pub keypoint_sigma: f64,
    /// Blur spread for dense conditions, in cells.
    pub blur_sigma: f64,
    pub blur_radius: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            keypoint_sigma: DEFAULT_KEYPOINT_SIGMA,
            blur_sigma: 1.5,
            blur_radius: 4,
        }
    }
}

/// Boxes map to their center with a quarter of their extent as spread, so
/// the 2-sigma contour touches the box edges.
pub fn gaussian_params_from_condition(cond: &Condition, keypoint_sigma: f64) -> Result<GaussianParams> {
    match cond {
        Condition::Box(b) => {
            if b.width() <= 0.0 || b.height() <= 0.0 {
                return Err(Error::DegenerateBox);
            }
            Ok(GaussianParams {
                mu_x: 0.5 * (b.x_min + b.x_max),
                mu_y: 0.5 * (b.y_min + b.y_max),
                sigma_x: b.width() / 4.0,
                sigma_y: b.height() / 4.0,
            })
        }
        Condition::Keypoint(k) => Ok(GaussianParams {
            mu_x: k.x,
            mu_y: k.y,
            sigma_x: keypoint_sigma,
            sigma_y: keypoint_sigma,
        }),
    }
}

/// Closed-form density sampled at cell centers `((x + 0.5) / w, (y + 0.5) / h)`.
pub fn render_gaussian(params: &GaussianParams, width: usize, height: usize) -> GroundingMap {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * params.sigma_x * params.sigma_y);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let v = (y as f64 + 0.5) / height as f64;
        let ey = (v - params.mu_y).powi(2) / (2.0 * params.sigma_y * params.sigma_y);
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let ex = (u - params.mu_x).powi(2) / (2.0 * params.sigma_x * params.sigma_x);
            data.push(norm * (-(ex + ey)).exp());
        }
    }
    GroundingMap {
        width,
        height,
        data,
        normalization: Normalization::Raw,
    }
}

/// Average of the peak-normalized Gaussians of every present condition in
/// frame `frame`; all-zero when nothing is present.
pub fn build_uncertainty_map(
    track: &GroundingTrack,
    frame: usize,
    width: usize,
    height: usize,
    config: &GroundingConfig,
) -> Result<GroundingMap> {
    let mut acc = GroundingMap::zeros(width, height);
    let mut count = 0usize;
    for cond in track.present_conditions(frame) {
        let params = gaussian_params_from_condition(cond, config.keypoint_sigma)?;
        let m = render_gaussian(&params, width, height).peak_normalized();
        for (a, v) in acc.data.iter_mut().zip(&m.data) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        acc.data.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(acc)
}

/// The grounding prior of one frame at `width x height`: the sparse
/// uncertainty map, the densified dense condition, or the mean of both when
/// a frame has both kinds.
pub fn frame_grounding_map(
    track: &GroundingTrack,
    frame: usize,
    width: usize,
    height: usize,
    config: &GroundingConfig,
) -> Result<GroundingMap> {
    let has_sparse = track.present_conditions(frame).next().is_some();
    let dense = match &track.dense_maps[frame] {
        Some(d) => {
            let m = densify(d, config.blur_sigma, config.blur_radius)?;
            Some(super::bias::resample_area(&m, width, height)?)
        }
        None => None,
    };
    match (has_sparse, dense) {
        (_, None) => build_uncertainty_map(track, frame, width, height, config),
        (false, Some(d)) => Ok(d),
        (true, Some(d)) => {
            let mut s = build_uncertainty_map(track, frame, width, height, config)?;
            for (a, b) in s.data.iter_mut().zip(&d.data) {
                *a = 0.5 * (*a + b);
            }
            Ok(s)
        }
    }
}
