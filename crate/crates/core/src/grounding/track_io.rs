//! JSON track files.
//!
//! ```json
//! {
//!   "num_frames": 2,
//!   "objects": [
//!     {"phrase": "a red car", "boxes": [[0.1, 0.2, 0.5, 0.6], null]},
//!     {"phrase": "a hand", "keypoints": [null, [0.4, 0.5, 1]]}
//!   ],
//!   "dense": [null, "depth_001.gvdm"]
//! }
//! ```
//!
//! Boxes are `[x_min, y_min, x_max, y_max]`; keypoints are `[x, y]` or
//! `[x, y, visible]`. A frame slot may hold a box or a keypoint, not both.
//! `null` marks a missing slot. All coordinates are normalized to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::types::{BoundingBox, Condition, GroundingTrack, Keypoint, TrackObject};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrack {
    num_frames: usize,
    objects: Vec<RawObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<Option<String>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<Option<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoints: Option<Vec<Option<Vec<f64>>>>,
}

fn check_len<T>(what: &str, phrase: &str, slots: &Option<Vec<T>>, n: usize) -> Result<()> {
    match slots {
        Some(v) if v.len() != n => Err(Error::TrackFrames(format!(
            "object `{phrase}` has {} {what} entries in a {n}-frame track",
            v.len()
        ))),
        _ => Ok(()),
    }
}

fn parse_box(phrase: &str, v: &[f64]) -> Result<Condition> {
    if v.len() != 4 {
        return Err(Error::TrackParse(format!(
            "object `{phrase}`: a box needs 4 coordinates, got {}",
            v.len()
        )));
    }
    Ok(Condition::Box(BoundingBox::new(v[0], v[1], v[2], v[3])?))
}

fn parse_keypoint(phrase: &str, v: &[f64]) -> Result<Condition> {
    let visible = match v.len() {
        2 => true,
        3 if v[2] == 0.0 || v[2] == 1.0 => v[2] == 1.0,
        _ => {
            return Err(Error::TrackParse(format!(
                "object `{phrase}`: a keypoint is [x, y] or [x, y, 0|1]"
            )))
        }
    };
    Ok(Condition::Keypoint(Keypoint::new(v[0], v[1], visible)?))
}

pub fn parse_condition_file(bytes: &[u8]) -> Result<GroundingTrack> {
    let raw: RawTrack = serde_json::from_slice(bytes).map_err(|e| Error::TrackParse(e.to_string()))?;
    let n = raw.num_frames;
    if n == 0 {
        return Err(Error::TrackFrames("num_frames must be at least 1".into()));
    }
    let mut objects = Vec::with_capacity(raw.objects.len());
    for o in raw.objects {
        check_len("box", &o.phrase, &o.boxes, n)?;
        check_len("keypoint", &o.phrase, &o.keypoints, n)?;
        let mut conditions = Vec::with_capacity(n);
        for j in 0..n {
            let b = o.boxes.as_ref().and_then(|v| v[j].as_deref());
            let k = o.keypoints.as_ref().and_then(|v| v[j].as_deref());
            conditions.push(match (b, k) {
                (Some(_), Some(_)) => {
                    return Err(Error::TrackParse(format!(
                        "object `{}` frame {j} has both a box and a keypoint",
                        o.phrase
                    )))
                }
                (Some(b), None) => Some(parse_box(&o.phrase, b)?),
                (None, Some(k)) => Some(parse_keypoint(&o.phrase, k)?),
                (None, None) => None,
            });
        }
        objects.push(TrackObject {
            phrase: o.phrase,
            conditions,
        });
    }
    let dense_paths = match raw.dense {
        Some(d) if d.len() != n => {
            return Err(Error::TrackFrames(format!(
                "dense has {} entries in a {n}-frame track",
                d.len()
            )))
        }
        Some(d) => d,
        None => vec![None; n],
    };
    let track = GroundingTrack {
        num_frames: n,
        objects,
        dense_paths,
        dense_maps: vec![None; n],
    };
    track.validate()?;
    Ok(track)
}

/// Serializes a track; parsing the output yields an equal track (up to the
/// runtime-only `dense_maps`).
pub fn serialize_track(track: &GroundingTrack) -> String {
    let objects = track
        .objects
        .iter()
        .map(|o| {
            let boxes: Vec<Option<Vec<f64>>> = o
                .conditions
                .iter()
                .map(|c| match c {
                    Some(Condition::Box(b)) => Some(b.coords().to_vec()),
                    _ => None,
                })
                .collect();
            let keypoints: Vec<Option<Vec<f64>>> = o
                .conditions
                .iter()
                .map(|c| match c {
                    Some(Condition::Keypoint(k)) => Some(vec![k.x, k.y, if k.visible { 1.0 } else { 0.0 }]),
                    _ => None,
                })
                .collect();
            let any_kp = keypoints.iter().any(Option::is_some);
            let any_box = boxes.iter().any(Option::is_some);
            RawObject {
                phrase: o.phrase.clone(),
                boxes: (any_box || !any_kp).then_some(boxes),
                keypoints: any_kp.then_some(keypoints),
            }
        })
        .collect();
    let dense = track
        .dense_paths
        .iter()
        .any(Option::is_some)
        .then(|| track.dense_paths.clone());
    let raw = RawTrack {
        num_frames: track.num_frames,
        objects,
        dense,
    };
    serde_json::to_string_pretty(&raw).expect("track serialization cannot fail")
}

pub fn read_track(path: &std::path::Path) -> Result<GroundingTrack> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut track = parse_condition_file(&bytes)?;
    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    track.load_dense(base)?;
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_track() {
        let t = parse_condition_file(
            br#"{"num_frames": 2, "objects": [{"phrase": "dog", "boxes": [[0.1,0.1,0.4,0.5],[0.2,0.1,0.5,0.5]]}]}"#,
        )
        .unwrap();
        assert_eq!((t.num_frames, t.num_objects()), (2, 1));
    }

    #[test]
    fn named_errors() {
        let range = br#"{"num_frames": 1, "objects": [{"phrase": "d", "boxes": [[0.1,0.1,1.2,0.5]]}]}"#;
        assert_eq!(parse_condition_file(range).unwrap_err().code(), "track-range");
        let frames = br#"{"num_frames": 4, "objects": [{"phrase": "d", "boxes": [null, null, null]}]}"#;
        assert_eq!(parse_condition_file(frames).unwrap_err().code(), "track-frames");
        assert_eq!(parse_condition_file(b"{not json").unwrap_err().code(), "track-parse");
        let short = br#"{"num_frames": 1, "objects": [{"phrase": "d", "boxes": [[0.1,0.1,0.4]]}]}"#;
        assert_eq!(parse_condition_file(short).unwrap_err().code(), "track-parse");
        let both = br#"{"num_frames": 1, "objects": [{"phrase": "d", "boxes": [[0.1,0.1,0.4,0.4]], "keypoints": [[0.1,0.2]]}]}"#;
        assert_eq!(parse_condition_file(both).unwrap_err().code(), "track-parse");
        let dense = br#"{"num_frames": 2, "objects": [], "dense": [null]}"#;
        assert_eq!(parse_condition_file(dense).unwrap_err().code(), "track-frames");
        let zero = br#"{"num_frames": 0, "objects": []}"#;
        assert_eq!(parse_condition_file(zero).unwrap_err().code(), "track-frames");
    }

    #[test]
    fn mixed_round_trip() {
        let src = br#"{"num_frames": 3, "objects": [
            {"phrase": "ball", "boxes": [[0.1,0.1,0.3,0.3], null, [0.333333333333,0.1,0.9,0.7]]},
            {"phrase": "hand", "boxes": [null, [0.5,0.5,0.6,0.6], null], "keypoints": [[0.2,0.2], null, [0.5,0.5,0]]}
        ], "dense": [null, "a.gvdm", null]}"#;
        let t = parse_condition_file(src).unwrap();
        let again = parse_condition_file(serialize_track(&t).as_bytes()).unwrap();
        assert_eq!(t, again);
    }
}
