//! Grounding conditions: parsing, uncertainty maps, dense blur, attention bias.

pub mod bias;
pub mod dense;
pub mod gaussian;
pub mod track_io;
pub mod types;

pub use bias::{map_to_attention_bias, resample_area};
pub use dense::{decode_gvdm, densify, encode_gvdm, read_gvdm, write_gvdm};
pub use gaussian::{
    build_uncertainty_map, frame_grounding_map, gaussian_params_from_condition, render_gaussian,
    GroundingConfig, DEFAULT_KEYPOINT_SIGMA,
};
pub use track_io::{parse_condition_file, read_track, serialize_track};
pub use types::{
    BoundingBox, Condition, DenseMap, GaussianParams, GroundingMap, GroundingTrack, Keypoint,
    Normalization, TrackObject,
};
