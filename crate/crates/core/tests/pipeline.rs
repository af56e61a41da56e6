use gvdiff_core::diffusion::{sample_video, GroundedUNet, LatentVideo, NoiseSchedule, SampleConfig, UNetConfig};
use gvdiff_core::grounding::{BoundingBox, Condition, GroundingConfig, GroundingTrack, TrackObject};
use gvdiff_core::numerics::{ParamStore, RngStream};
use gvdiff_core::pipeline::io::{decode_video, encode_video, video_header};
use gvdiff_core::pipeline::*;
use gvdiff_core::stgl::{encode_prompt, HashTextEmbedder};
use proptest::prelude::*;

const TEXT: HashTextEmbedder = HashTextEmbedder { seed: 5, width: 8 };

/// Embeds a frame as the unit vector at angle `frame[0] * step` in a plane,
/// and any caption as the first basis vector.
struct AngleEmbedder {
    step: f64,
}

impl Embedder for AngleEmbedder {
    fn embed_frame(&self, frame: &[f64]) -> Vec<f64> {
        let a = frame[0] * self.step;
        vec![a.cos(), a.sin(), 0.0]
    }

    fn embed_text(&self, _: &str) -> Vec<f64> {
        vec![1.0, 0.0, 0.0]
    }
}

/// Frame `j` of the video has every value equal to `j`.
fn indexed_video(frames: usize) -> LatentVideo {
    let mut v = LatentVideo::zeros(frames, 2, 4, 4);
    for n in 0..frames {
        v.frame_mut(n).iter_mut().for_each(|x| *x = n as f64);
    }
    v
}

fn keyframes(list: &[(usize, &str)]) -> Vec<(usize, String)> {
    list.iter().map(|(f, t)| (*f, t.to_string())).collect()
}

#[test]
fn prompt_schedule_keyframes_and_midpoint() {
    let s = build_prompt_schedule(&keyframes(&[(0, "a cat"), (10, "a dog")]), &TEXT, 14, 3).unwrap();
    let e0 = encode_prompt(&TEXT, "a cat", 3);
    let e10 = encode_prompt(&TEXT, "a dog", 3);
    assert_eq!(s.table.rows(), 14 * 3);
    assert_eq!(s.frame(0), e0.data());
    assert_eq!(s.frame(10), e10.data());
    for (m, (a, b)) in s.frame(5).iter().zip(e0.data().iter().zip(e10.data())) {
        assert!((m - (0.5 * a + 0.5 * b)).abs() <= 1e-12);
    }
    // Frames past the last keyframe hold it.
    assert_eq!(s.frame(13), e10.data());
    let single = build_prompt_schedule(&keyframes(&[(0, "a cat")]), &TEXT, 6, 3).unwrap();
    for j in 0..6 {
        assert_eq!(single.frame(j), e0.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interior_rows_are_convex_combinations(gap in 2usize..12, j_off in 1usize..11) {
        let j = 1 + (j_off - 1) % (gap - 1);
        let s = build_prompt_schedule(&keyframes(&[(0, "sun"), (gap, "rain")]), &TEXT, gap + 1, 2).unwrap();
        let (a, b) = (s.frame(0), s.frame(gap));
        let w = j as f64 / gap as f64;
        prop_assert!((0.0..=1.0).contains(&w));
        for ((x, ea), eb) in s.frame(j).iter().zip(a).zip(b) {
            prop_assert!((x - ((1.0 - w) * ea + w * eb)).abs() <= 1e-12);
            prop_assert!(*x >= ea.min(*eb) - 1e-15 && *x <= ea.max(*eb) + 1e-15);
        }
    }

    #[test]
    fn compositing_is_idempotent(seed in 0u64..500) {
        let mut rng = RngStream::new(seed, "composite");
        let b = LatentVideo::new(2, 3, 4, 4, rng.normals(96)).unwrap();
        let g = LatentVideo::new(2, 3, 4, 4, rng.normals(96)).unwrap();
        let bits: Vec<bool> = (0..32).map(|_| rng.uniform() < 0.5).collect();
        let m = ObjectMask::new(2, 4, 4, bits).unwrap();
        let once = object_composite(&b, &g, &m).unwrap();
        prop_assert_eq!(object_composite(&b, &once, &m).unwrap(), once);
    }

    #[test]
    fn prompt_consistency_ignores_frame_order(seed in 0u64..200) {
        let mut rng = RngStream::new(seed, "perm");
        let e = StubEmbedder { seed: 2, dim: 16 };
        let v = LatentVideo::new(4, 1, 4, 4, rng.normals(64)).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        order.rotate_left(1 + (seed as usize) % 3);
        order.swap(0, 2);
        let mut data = Vec::new();
        for &n in &order {
            data.extend_from_slice(v.frame(n));
        }
        let p = LatentVideo::new(4, 1, 4, 4, data).unwrap();
        let a = prompt_consistency(&v, "a cat", &e).unwrap();
        let b = prompt_consistency(&p, "a cat", &e).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn composite_masks() {
    let mut rng = RngStream::new(1, "masks");
    let b = LatentVideo::new(2, 2, 4, 4, rng.normals(64)).unwrap();
    let g = LatentVideo::new(2, 2, 4, 4, rng.normals(64)).unwrap();
    assert_eq!(object_composite(&b, &g, &ObjectMask::filled(2, 4, 4, true)).unwrap(), g);
    assert_eq!(object_composite(&b, &g, &ObjectMask::filled(2, 4, 4, false)).unwrap(), b);
    let half = ObjectMask::from_fn(2, 4, 4, |_, _, x| x < 2);
    let out = object_composite(&b, &g, &half).unwrap();
    for n in 0..2 {
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let src = if x < 2 { &g } else { &b };
                    assert_eq!(out.at(n, c, y, x).to_bits(), src.at(n, c, y, x).to_bits());
                }
            }
        }
    }
}

#[test]
fn temporal_consistency_anchors() {
    let identical = LatentVideo::new(5, 2, 4, 4, vec![0.3; 160]).unwrap();
    let stub = StubEmbedder { seed: 9, dim: 32 };
    assert_eq!(temporal_consistency(&identical, &stub).unwrap(), 100.0);
    assert_eq!(temporal_consistency_all_pairs(&identical, &stub).unwrap(), 100.0);

    let v = indexed_video(6);
    let orthogonal = AngleEmbedder {
        step: std::f64::consts::FRAC_PI_2,
    };
    assert!(temporal_consistency(&v, &orthogonal).unwrap().abs() < 1e-9);
    let sixty = AngleEmbedder {
        step: std::f64::consts::FRAC_PI_3,
    };
    assert!((temporal_consistency(&v, &sixty).unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn prompt_consistency_anchors() {
    let v = indexed_video(3);
    // Every frame at angle 0 matches the caption vector.
    let aligned = AngleEmbedder { step: 0.0 };
    assert_eq!(prompt_consistency(&v, "anything", &aligned).unwrap(), 100.0);
    // Every frame at a right angle to the caption vector.
    let ones = LatentVideo::new(2, 2, 4, 4, vec![1.0; 64]).unwrap();
    let ortho = AngleEmbedder {
        step: std::f64::consts::FRAC_PI_2,
    };
    assert!(prompt_consistency(&ones, "anything", &ortho).unwrap().abs() < 1e-9);
}

#[test]
fn metrics_are_pure() {
    let mut rng = RngStream::new(3, "pure");
    let v = LatentVideo::new(6, 2, 4, 4, rng.normals(192)).unwrap();
    let e = StubEmbedder { seed: 4, dim: 24 };
    let a = temporal_consistency(&v, &e).unwrap();
    assert_eq!(a.to_bits(), temporal_consistency(&v, &e).unwrap().to_bits());
    let p = prompt_consistency(&v, "a bird", &e).unwrap();
    assert_eq!(p.to_bits(), prompt_consistency(&v, "a bird", &e).unwrap().to_bits());
}

fn box_track(boxes: &[[f64; 4]]) -> GroundingTrack {
    GroundingTrack::new(
        boxes.len(),
        vec![TrackObject {
            phrase: "thing".into(),
            conditions: boxes
                .iter()
                .map(|b| Some(Condition::Box(BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap())))
                .collect(),
        }],
    )
    .unwrap()
}

#[test]
fn condition_similarity_anchors() {
    let cfg = GroundingConfig::default();
    let a = box_track(&[[0.1, 0.1, 0.3, 0.3], [0.5, 0.5, 0.9, 0.8]]);
    let b = box_track(&[[0.2, 0.1, 0.5, 0.4], [0.6, 0.4, 0.8, 0.9]]);
    assert_eq!(condition_similarity(&a, &a, 16, 16, &cfg).unwrap(), 100.0);
    let ab = condition_similarity(&a, &b, 16, 16, &cfg).unwrap();
    assert_eq!(ab.to_bits(), condition_similarity(&b, &a, 16, 16, &cfg).unwrap().to_bits());
    assert!(ab > 0.0 && ab < 100.0);
    let empty = GroundingTrack::empty(2);
    assert_eq!(condition_similarity(&empty, &empty, 16, 16, &cfg).unwrap(), 100.0);
    assert_eq!(condition_similarity(&a, &empty, 16, 16, &cfg).unwrap(), 0.0);
}

fn tiny_model() -> (ParamStore, GroundedUNet) {
    let config = UNetConfig {
        channels: 2,
        base_width: 8,
        text_width: 8,
        grounded_width: 8,
        num_freqs: 2,
        prompt_tokens: 2,
        ..UNetConfig::default()
    };
    let mut store = ParamStore::new();
    let m = GroundedUNet::new(config, &mut store, 17);
    let mut rng = RngStream::new(18, "perturb");
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    (store, m)
}

fn moving_track(frames: usize) -> GroundingTrack {
    let boxes: Vec<[f64; 4]> = (0..frames)
        .map(|j| {
            let x = 0.6 * j as f64 / frames as f64;
            [x, 0.2, x + 0.3, 0.6]
        })
        .collect();
    box_track(&boxes)
}

#[test]
fn long_range_overlap_is_bit_identical() {
    let (store, m) = tiny_model();
    let schedule = NoiseSchedule::default();
    let config = SampleConfig {
        steps: 3,
        height: 8,
        width: 8,
        seed: 4,
        ..SampleConfig::default()
    };
    let track = moving_track(24);
    let prompts = build_prompt_schedule(&keyframes(&[(0, "a cat"), (12, "a dog")]), &TEXT, 24, 2).unwrap();
    let plan = GenerationPlan::new(24, 16, 8).unwrap();
    let out = generate_long_range(&m, &store, &schedule, &track, &prompts, &plan, &TEXT, &config).unwrap();
    assert_eq!(out.video.frames, 24);
    let (c1, c2) = (&out.chunks[0], &out.chunks[1]);
    for j in 8..16 {
        let a: Vec<u64> = c1.frame(j).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = c2.frame(j - 8).iter().map(|v| v.to_bits()).collect();
        let o: Vec<u64> = out.video.frame(j).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "frame {j}");
        assert_eq!(a, o, "frame {j}");
    }
    assert_eq!(out.video.frame(20), c2.frame(12));
}

#[test]
fn single_chunk_equals_plain_sampling() {
    let (store, m) = tiny_model();
    let schedule = NoiseSchedule::default();
    let config = SampleConfig {
        steps: 3,
        height: 8,
        width: 8,
        seed: 11,
        ..SampleConfig::default()
    };
    let track = moving_track(16);
    let prompts = build_prompt_schedule(&keyframes(&[(0, "a cat")]), &TEXT, 16, 2).unwrap();
    let plan = GenerationPlan::new(16, 16, 4).unwrap();
    let long = generate_long_range(&m, &store, &schedule, &track, &prompts, &plan, &TEXT, &config).unwrap();
    let plain = sample_video(&m, &store, &schedule, &prompts.table, &track, &TEXT, &config).unwrap();
    assert_eq!(long.video, plain.video);
}

#[test]
fn long_range_rejects_mismatched_inputs() {
    let (store, m) = tiny_model();
    let schedule = NoiseSchedule::default();
    let config = SampleConfig::default();
    let prompts = build_prompt_schedule(&keyframes(&[(0, "a cat")]), &TEXT, 24, 2).unwrap();
    let plan = GenerationPlan::new(24, 16, 8).unwrap();
    let err = generate_long_range(&m, &store, &schedule, &moving_track(20), &prompts, &plan, &TEXT, &config);
    assert_eq!(err.unwrap_err().code(), "track-frames");
}

#[test]
fn latent_video_gvdm_round_trip() {
    let mut rng = RngStream::new(6, "io");
    let v = LatentVideo::new(3, 2, 4, 8, rng.normals(192).into_iter().map(|x| x as f32 as f64).collect()).unwrap();
    let bytes = encode_video(&v);
    let back = decode_video(&bytes, &video_header(&v)).unwrap();
    assert_eq!(back, v);
    assert_eq!(encode_video(&back), bytes);
    assert_eq!(decode_video(&bytes[..bytes.len() - 2], &video_header(&v)).unwrap_err().code(), "gvdm-format");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.gvdm");
    write_video(&path, &v).unwrap();
    assert_eq!(read_video(&path).unwrap(), v);
    let mask = ObjectMask::from_fn(3, 4, 8, |n, y, x| (n + y * x) % 3 == 0);
    let mpath = dir.path().join("m.gvdm");
    write_mask(&mpath, &mask).unwrap();
    assert_eq!(read_mask(&mpath).unwrap(), mask);
}
