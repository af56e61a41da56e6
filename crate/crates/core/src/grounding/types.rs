use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Validated box: all coordinates in `[0, 1]`, positive extent.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.coords();
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::TrackRange(format!("box {coords:?} leaves [0, 1]")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::TrackRange(format!("box {coords:?} needs min < max on both axes")));
        }
        Ok(())
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visible: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::TrackRange(format!("keypoint ({x}, {y}) leaves [0, 1]")));
        }
        Ok(Self { x, y, visible })
    }
}

/// A sparse per-frame grounding condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Box(BoundingBox),
    Keypoint(Keypoint),
}

impl Condition {
    /// Coordinates fed to the Fourier embedding: boxes as their four
    /// corners, keypoints as `(x, y, x, y)`.
    pub fn embedding_coords(&self) -> [f64; 4] {
        match self {
            Condition::Box(b) => b.coords(),
            Condition::Keypoint(k) => [k.x, k.y, k.x, k.y],
        }
    }

    /// Invisible keypoints behave like a missing slot.
    pub fn is_present(&self) -> bool {
        match self {
            Condition::Box(_) => true,
            Condition::Keypoint(k) => k.visible,
        }
    }
}

/// Dense grounding grid (depth, edges, normals ...), row-major with the
/// channel index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::GvdmFormat(format!(
                "{width}x{height}x{channels} grid needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Validates the grounding-map invariant: finite and nonnegative.
    pub fn validate_nonnegative(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::TrackRange("dense map values must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Mean across channels, row-major `width * height`.
    pub fn channel_mean(&self) -> Vec<f64> {
        let c = self.channels.max(1);
        self.data
            .chunks(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect()
    }
}

/// One grounded object: a phrase plus one condition slot per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackObject {
    pub phrase: String,
    pub conditions: Vec<Option<Condition>>,
}

/// Per-frame, per-object grounding conditions for a clip of `num_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingTrack {
    pub num_frames: usize,
    pub objects: Vec<TrackObject>,
    /// Dense-condition file per frame, as written in the track file.
    pub dense_paths: Vec<Option<String>>,
    /// Loaded (or programmatically supplied) dense maps per frame.
    pub dense_maps: Vec<Option<DenseMap>>,
}

impl GroundingTrack {
    pub fn new(num_frames: usize, objects: Vec<TrackObject>) -> Result<Self> {
        let track = Self {
            num_frames,
            objects,
            dense_paths: vec![None; num_frames],
            dense_maps: vec![None; num_frames],
        };
        track.validate()?;
        Ok(track)
    }

    /// A track with no objects and no dense maps.
    pub fn empty(num_frames: usize) -> Self {
        Self {
            num_frames,
            objects: Vec::new(),
            dense_paths: vec![None; num_frames],
            dense_maps: vec![None; num_frames],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::TrackFrames("a track needs at least one frame".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.conditions.len() != self.num_frames {
                return Err(Error::TrackFrames(format!(
                    "object {i} (`{}`) has {} condition slots in a {}-frame track",
                    o.phrase,
                    o.conditions.len(),
                    self.num_frames
                )));
            }
            for c in o.conditions.iter().flatten() {
                match c {
                    Condition::Box(b) => b.validate()?,
                    Condition::Keypoint(k) => {
                        Keypoint::new(k.x, k.y, k.visible)?;
                    }
                }
            }
        }
        if self.dense_paths.len() != self.num_frames || self.dense_maps.len() != self.num_frames {
            return Err(Error::TrackFrames(format!(
                "dense slots {} / {} for {} frames",
                self.dense_paths.len(),
                self.dense_maps.len(),
                self.num_frames
            )));
        }
        for m in self.dense_maps.iter().flatten() {
            m.validate_nonnegative()?;
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    /// Present (visible) sparse conditions of frame `j`.
    pub fn present_conditions(&self, frame: usize) -> impl Iterator<Item = &Condition> {
        self.objects
            .iter()
            .filter_map(move |o| o.conditions[frame].as_ref())
            .filter(|c| c.is_present())
    }

    /// Frames `[start, end)` as a standalone track.
    pub fn slice_frames(&self, start: usize, end: usize) -> GroundingTrack {
        GroundingTrack {
            num_frames: end - start,
            objects: self
                .objects
                .iter()
                .map(|o| TrackObject {
                    phrase: o.phrase.clone(),
                    conditions: o.conditions[start..end].to_vec(),
                })
                .collect(),
            dense_paths: self.dense_paths[start..end].to_vec(),
            dense_maps: self.dense_maps[start..end].to_vec(),
        }
    }

    /// Same objects with every slot marked missing and no dense maps; the
    /// null-conditioned counterpart used by classifier-free guidance.
    pub fn nulled(&self) -> GroundingTrack {
        GroundingTrack {
            num_frames: self.num_frames,
            objects: self
                .objects
                .iter()
                .map(|o| TrackObject {
                    phrase: o.phrase.clone(),
                    conditions: vec![None; self.num_frames],
                })
                .collect(),
            dense_paths: vec![None; self.num_frames],
            dense_maps: vec![None; self.num_frames],
        }
    }

    /// Loads every referenced dense map, resolving relative paths against `base`.
    pub fn load_dense(&mut self, base: &std::path::Path) -> Result<()> {
        for (slot, path) in self.dense_maps.iter_mut().zip(&self.dense_paths) {
            if let Some(p) = path {
                let full = base.join(p);
                let map = super::dense::read_gvdm(&full)?;
                map.validate_nonnegative()?;
                *slot = Some(map);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    PeakNormalized,
}

/// A 2-D nonnegative spatial prior, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub normalization: Normalization,
}

impl GroundingMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            normalization: Normalization::PeakNormalized,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Scales so the maximum is 1; all-zero maps stay all-zero.
    pub fn peak_normalized(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= m);
        }
        self.normalization = Normalization::PeakNormalized;
        self
    }
}

/// Center and spread of an axis-aligned 2-D Gaussian, normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}
