use gvdiff_core::diffusion::*;
use gvdiff_core::dgn::GateNoise;
use gvdiff_core::grounding::{BoundingBox, Condition, GroundingTrack, TrackObject};
use gvdiff_core::numerics::{ParamStore, RngStream, Tensor};
use gvdiff_core::stgl::HashTextEmbedder;
use proptest::prelude::*;

const EMB: HashTextEmbedder = HashTextEmbedder { seed: 11, width: 8 };

fn small_config() -> UNetConfig {
    UNetConfig {
        channels: 2,
        base_width: 8,
        text_width: 8,
        grounded_width: 8,
        num_freqs: 2,
        prompt_tokens: 2,
        ..UNetConfig::default()
    }
}

fn model(config: UNetConfig, seed: u64) -> (ParamStore, GroundedUNet) {
    let mut store = ParamStore::new();
    let m = GroundedUNet::new(config, &mut store, seed);
    (store, m)
}

fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = RngStream::new(seed, "perturb");
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += scale * rng.normal();
        }
    }
}

fn random_video(rng: &mut RngStream, frames: usize, channels: usize, h: usize, w: usize) -> LatentVideo {
    LatentVideo::new(frames, channels, h, w, rng.normals(frames * channels * h * w)).unwrap()
}

fn random_box(rng: &mut RngStream) -> BoundingBox {
    let x0 = 0.7 * rng.uniform();
    let y0 = 0.7 * rng.uniform();
    BoundingBox::new(x0, y0, x0 + 0.1 + 0.2 * rng.uniform(), y0 + 0.1 + 0.2 * rng.uniform()).unwrap()
}

fn random_track(rng: &mut RngStream, frames: usize, objects: usize) -> GroundingTrack {
    let objs = (0..objects)
        .map(|m| TrackObject {
            phrase: format!("object {m}"),
            conditions: (0..frames)
                .map(|_| (rng.uniform() < 0.85).then(|| Condition::Box(random_box(rng))))
                .collect(),
        })
        .collect();
    GroundingTrack::new(frames, objs).unwrap()
}

#[test]
fn add_noise_matches_iterated_step_means() {
    let s = NoiseSchedule::default();
    let mut rng = RngStream::new(1, "z0");
    let z0 = rng.normals(6);
    let zeros = vec![0.0; 6];
    for t in [1, 2, 17, 250, 999, 1000] {
        // Each step maps the mean through sqrt(1 - beta_i).
        let mut z = z0.clone();
        for i in 1..=t {
            let a = (1.0 - s.beta(i)).sqrt();
            z.iter_mut().for_each(|v| *v *= a);
        }
        let closed = add_noise(&z0, t, &zeros, &s).unwrap();
        for (a, b) in z.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn ddim_one_jump_inverts_noising() {
    let s = NoiseSchedule::default();
    let mut rng = RngStream::new(2, "ddim");
    for _ in 0..100 {
        let t = rng.int_inclusive(1, 1000);
        let z0 = rng.normals(16);
        let eps = rng.normals(16);
        let zt = add_noise(&z0, t, &eps, &s).unwrap();
        let back = ddim_step(&zt, &eps, t, 0, &s).unwrap();
        for (a, b) in back.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-8, "t={t}");
        }
    }
}

#[test]
fn fresh_model_equals_base_network() {
    for bias_scale in [1.0, 0.0] {
        let config = UNetConfig {
            bias_scale,
            ..small_config()
        };
        let (store, m) = model(config, 3);
        let mut rng = RngStream::new(4, "identity");
        for case in 0..5 {
            let frames = 1 + case % 3;
            let z = random_video(&mut rng, frames, 2, 8, 8);
            let track = random_track(&mut rng, frames, case % 3);
            let prompt = uniform_prompt_table(&EMB, "a red ball", frames, 2);
            let cond = Conditioning {
                prompt: &prompt,
                track: &track,
                embedder: &EMB,
            };
            let t = rng.int_inclusive(1, 1000);
            let full = unet_forward(&m, &store, &z, t, &cond, ForwardOptions::INFER, &mut GatePolicy::Open).unwrap();
            let base = unet_forward(&m, &store, &z, t, &cond, ForwardOptions::BASE, &mut GatePolicy::Open).unwrap();
            for (a, b) in full.eps.data.iter().zip(&base.eps.data) {
                assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn closed_gates_ignore_grounded_tokens() {
    let (mut store, m) = model(small_config(), 5);
    perturb(&mut store, 6, 0.3);
    let mut rng = RngStream::new(7, "gates");
    let z = random_video(&mut rng, 2, 2, 8, 8);
    let track = random_track(&mut rng, 2, 2);
    let mut renamed = track.clone();
    for o in &mut renamed.objects {
        o.phrase = format!("other {}", o.phrase);
    }
    let prompt = uniform_prompt_table(&EMB, "two things", 2, 2);
    let run = |tr: &GroundingTrack, gates: Vec<f64>| {
        let cond = Conditioning {
            prompt: &prompt,
            track: tr,
            embedder: &EMB,
        };
        unet_forward(&m, &store, &z, 500, &cond, ForwardOptions::INFER, &mut GatePolicy::Forced(gates))
            .unwrap()
            .eps
            .data
    };
    assert_eq!(run(&track, vec![0.0; 5]), run(&renamed, vec![0.0; 5]));
    assert_ne!(run(&track, vec![1.0; 5]), run(&renamed, vec![1.0; 5]));
}

#[test]
fn output_shape_matches_input() {
    let (store, m) = model(UNetConfig::default(), 8);
    let emb = HashTextEmbedder { seed: 1, width: 16 };
    let mut rng = RngStream::new(9, "shape");
    let z = random_video(&mut rng, 8, 4, 16, 16);
    let track = random_track(&mut rng, 8, 1);
    let prompt = uniform_prompt_table(&emb, "a ball", 8, 4);
    let cond = Conditioning {
        prompt: &prompt,
        track: &track,
        embedder: &emb,
    };
    let out = unet_forward(&m, &store, &z, 10, &cond, ForwardOptions::INFER, &mut GatePolicy::Infer).unwrap();
    assert!(out.eps.same_shape(&z));
    assert_eq!(out.decisions.len(), GATED_LAYERS);
    let odd = random_video(&mut rng, 8, 4, 10, 16);
    assert_eq!(
        unet_forward(&m, &store, &odd, 10, &cond, ForwardOptions::INFER, &mut GatePolicy::Infer)
            .unwrap_err()
            .code(),
        "unet-shape"
    );
}

fn items(config: &UNetConfig, n: usize, frames: usize, hw: usize) -> Vec<TrainItem> {
    (0..n as u64)
        .map(|i| {
            let c = synthetic_clip(100 + i, frames, config.channels, hw, hw);
            TrainItem {
                prompt: uniform_prompt_table(&EMB, &c.caption, frames, config.prompt_tokens),
                z0: c.video,
                track: c.track,
            }
        })
        .collect()
}

#[test]
fn stage_freezing_is_bit_exact() {
    let config = small_config();
    let batch = items(&config, 2, 2, 8);
    let schedule = NoiseSchedule::default();
    for stage in Stage::ALL {
        let (mut store, m) = model(config.clone(), 10);
        perturb(&mut store, 12, 0.05);
        let before = store.clone();
        let mut state = TrainState::new(13);
        let tc = TrainConfig {
            learning_rate: 1e-3,
            cond_drop: 0.3,
            gate_penalty: 0.1,
        };
        for _ in 0..10 {
            let loss = training_step(&m, &mut store, &batch, stage, &schedule, &tc, &mut state, &EMB).unwrap();
            assert!(loss.is_finite() && loss >= 0.0, "{stage}: loss {loss}");
        }
        let mut moved = 0;
        for (a, b) in before.iter().zip(store.iter()) {
            if a.group == stage.group() {
                moved += usize::from(a.tensor != b.tensor);
            } else {
                assert_eq!(a.tensor.data(), b.tensor.data(), "{stage}: `{}` moved", a.name);
            }
        }
        assert!(moved > 0, "{stage}: nothing trained");
    }
}

#[test]
fn empty_batch_is_rejected() {
    let (mut store, m) = model(small_config(), 1);
    let err = training_step(
        &m,
        &mut store,
        &[],
        Stage::Base,
        &NoiseSchedule::default(),
        &TrainConfig::default(),
        &mut TrainState::new(0),
        &EMB,
    )
    .unwrap_err();
    assert_eq!(err.code(), "empty-batch");
}

#[test]
fn perfect_prediction_has_zero_loss() {
    // With a zeroed output projection the prediction is exactly zero, so
    // the loss is the mean square of the drawn noise.
    let config = small_config();
    let (mut store, m) = model(config.clone(), 2);
    for p in store.iter_mut() {
        if p.name.starts_with("unet.out_proj") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let batch = items(&config, 1, 2, 8);
    let s = NoiseSchedule::default();
    let loss = evaluation_loss(&m, &store, &batch, Stage::Base, &s, &[1000], 4, &EMB).unwrap();
    let eps = RngStream::new(4, gvdiff_core::numerics::rng::NOISE).substream(0).normals(batch[0].z0.data.len());
    let expected = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
    assert!((loss - expected).abs() < 1e-12);
}

/// Loss at fixed `(t, eps)` and fixed gate draws, as a function of the store.
fn fixed_loss(
    m: &GroundedUNet,
    store: &ParamStore,
    z_t: &LatentVideo,
    eps: &[f64],
    cond: &Conditioning,
    policy: &GatePolicy,
) -> (f64, UNetCache, Vec<f64>) {
    let opts = ForwardOptions {
        grounded: true,
        need_grad: true,
    };
    let (out, cache) = m.forward(store, z_t, 300, cond, opts, &mut policy.clone()).unwrap();
    let n = eps.len() as f64;
    let loss = out.eps.data.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / n;
    let deps = out.eps.data.iter().zip(eps).map(|(p, e)| 2.0 * (p - e) / n).collect();
    (loss, cache, deps)
}

#[test]
fn end_to_end_gradient_check() {
    let config = small_config();
    let (mut store, m) = model(config, 21);
    perturb(&mut store, 22, 0.3);
    let mut rng = RngStream::new(23, "e2e");
    let z0 = random_video(&mut rng, 2, 2, 8, 8);
    let eps = rng.normals(z0.data.len());
    let schedule = NoiseSchedule::default();
    let z_t = LatentVideo {
        data: add_noise(&z0.data, 300, &eps, &schedule).unwrap(),
        ..z0.clone()
    };
    let track = random_track(&mut rng, 2, 2);
    let prompt = uniform_prompt_table(&EMB, "a red ball", 2, 2);
    let cond = Conditioning {
        prompt: &prompt,
        track: &track,
        embedder: &EMB,
    };
    for policy in [GatePolicy::Open, GatePolicy::Train(GateNoise::new(5, GATED_LAYERS))] {
        store.zero_grads();
        let (_, cache, deps) = fixed_loss(&m, &store, &z_t, &eps, &cond, &policy);
        m.backward(&mut store, &cache, &LatentVideo { data: deps, ..z0.clone() }, 0.0);

        // 32 random entries across all parameters.
        let sizes: Vec<(usize, usize)> = store.iter().enumerate().map(|(i, p)| (i, p.tensor.len())).collect();
        let total: usize = sizes.iter().map(|s| s.1).sum();
        let mut worst: f64 = 0.0;
        for _ in 0..32 {
            let mut k = rng.int_inclusive(0, total - 1);
            let (pi, _) = *sizes
                .iter()
                .find(|(_, len)| {
                    if k < *len {
                        true
                    } else {
                        k -= len;
                        false
                    }
                })
                .unwrap();
            let analytic = store.iter().nth(pi).unwrap().grad.data()[k];
            let h = 1e-5;
            let mut probe = |delta: f64| {
                store.iter_mut().nth(pi).unwrap().tensor.data_mut()[k] += delta;
                let l = fixed_loss(&m, &store, &z_t, &eps, &cond, &policy).0;
                store.iter_mut().nth(pi).unwrap().tensor.data_mut()[k] -= delta;
                l
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}

fn sample_setup() -> (ParamStore, GroundedUNet, GroundingTrack, Tensor) {
    let (mut store, m) = model(small_config(), 30);
    perturb(&mut store, 31, 0.2);
    let mut rng = RngStream::new(32, "sample");
    let track = random_track(&mut rng, 3, 1);
    let prompt = uniform_prompt_table(&EMB, "a kite", 3, 2);
    (store, m, track, prompt)
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let (store, m, track, prompt) = sample_setup();
    let schedule = NoiseSchedule::default();
    let config = SampleConfig {
        steps: 5,
        height: 8,
        width: 8,
        seed: 7,
        ..SampleConfig::default()
    };
    let a = sample_video(&m, &store, &schedule, &prompt, &track, &EMB, &config).unwrap();
    let b = sample_video(&m, &store, &schedule, &prompt, &track, &EMB, &config).unwrap();
    assert_eq!(a.video, b.video);
    assert_eq!(a.video.frames, 3);
    assert_eq!(a.trace.len(), 5 * GATED_LAYERS);
    assert!(a.video.is_finite());
    let c = sample_video(&m, &store, &schedule, &prompt, &track, &EMB, &SampleConfig { seed: 8, ..config }).unwrap();
    assert_ne!(a.video, c.video);
}

#[test]
fn context_frames_are_reproduced_exactly() {
    let (store, m, track, prompt) = sample_setup();
    let schedule = NoiseSchedule::default();
    let config = SampleConfig {
        steps: 4,
        height: 8,
        width: 8,
        ..SampleConfig::default()
    };
    let mut rng = RngStream::new(40, "ctx");
    let ctx = random_video(&mut rng, 1, 2, 8, 8);
    let out = sample_video_with_context(
        &m,
        &store,
        &schedule,
        &prompt,
        &track,
        &EMB,
        &config,
        Some(ContextFrames { video: &ctx }),
    )
    .unwrap();
    assert_eq!(out.video.frame(0), ctx.frame(0));
}

#[test]
fn checkpoint_round_trip_through_a_file() {
    let (mut store, _) = model(small_config(), 50);
    perturb(&mut store, 51, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gvck");
    save_checkpoint(&path, &store).unwrap();
    let (mut other, _) = model(small_config(), 52);
    load_checkpoint(&path, &mut other).unwrap();
    save_checkpoint(&path, &other).unwrap();
    let first = std::fs::read(&path).unwrap();
    let mut third = other.clone();
    load_checkpoint(&path, &mut third).unwrap();
    assert_eq!(encode_checkpoint(&third), first);
    for (a, b) in store.iter().zip(other.iter()) {
        for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cfg_combine_interpolates(c in -5.0f64..5.0, u in -5.0f64..5.0, s in 0.0f64..10.0) {
        let out = cfg_combine(&[c], &[u], s)[0];
        prop_assert!((out - (u + s * (c - u))).abs() < 1e-12);
        prop_assert_eq!(cfg_combine(&[c], &[u], 1.0)[0], c);
        prop_assert_eq!(cfg_combine(&[c], &[u], 0.0)[0], u);
    }

    #[test]
    fn training_loss_is_nonnegative(seed in 0u64..1000) {
        let config = small_config();
        let (mut store, m) = model(config.clone(), seed);
        let batch = items(&config, 1, 1, 4);
        let loss = training_step(
            &m, &mut store, &batch, Stage::Stga, &NoiseSchedule::default(),
            &TrainConfig::default(), &mut TrainState::new(seed), &EMB,
        ).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }
}
