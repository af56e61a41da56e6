//! Classifier-free guided DDIM sampling.

use super::schedule::{add_noise, cfg_combine, ddim_step, ddim_timesteps, NoiseSchedule};
use super::schedule::{DEFAULT_GUIDANCE_SCALE, DEFAULT_SAMPLING_STEPS};
use super::unet::{Conditioning, ForwardOptions, GatePolicy, GroundedUNet};
use super::video::LatentVideo;
use crate::dgn::GateDecision;
use crate::error::{Error, Result};
use crate::grounding::GroundingTrack;
use crate::numerics::rng::NOISE;
use crate::numerics::{RngStream, Tensor};
use crate::stgl::{encode_prompt, TextEmbedder};

/// The same caption for every frame, `[frames * tokens, width]`.
pub fn uniform_prompt_table(embedder: &dyn TextEmbedder, text: &str, frames: usize, tokens: usize) -> Tensor {
    let one = encode_prompt(embedder, text, tokens);
    let parts: Vec<&Tensor> = (0..frames).map(|_| &one).collect();
    Tensor::vstack(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    /// Whether the unconditioned pass also drops the grounding track.
    pub null_grounding: bool,
    pub height: usize,
    pub width: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            seed: 0,
            null_grounding: true,
            height: 16,
            width: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub video: LatentVideo,
    /// Gate decisions of every conditioned pass, in evaluation order.
    pub trace: Vec<GateDecision>,
}

/// `eps_u + scale * (eps_c - eps_u)`, with the unconditioned pass run on
/// `uncond`. Returns the guided prediction and the conditioned pass's gates.
#[allow(clippy::too_many_arguments)]
pub fn cfg_predict(
    model: &GroundedUNet,
    store: &crate::numerics::ParamStore,
    z_t: &LatentVideo,
    t: usize,
    cond: &Conditioning,
    uncond: &Conditioning,
    scale: f64,
    opts: ForwardOptions,
) -> Result<(LatentVideo, Vec<GateDecision>)> {
    let c = model.forward(store, z_t, t, cond, opts, &mut GatePolicy::Infer)?.0;
    let u = model.forward(store, z_t, t, uncond, opts, &mut GatePolicy::Infer)?.0;
    let eps = LatentVideo {
        data: cfg_combine(&c.eps.data, &u.eps.data, scale),
        ..c.eps
    };
    Ok((eps, c.decisions))
}

/// Known leading frames for replacement conditioning.
#[derive(Debug, Clone, Copy)]
pub struct ContextFrames<'a> {
    pub video: &'a LatentVideo,
}

/// DDIM sampling from seeded Gaussian noise. When `context` is given, its
/// frames replace the leading frames of the latent at the matching noise
/// level before every denoising step and after the last one, so the output
/// reproduces them exactly.
pub fn sample_video_with_context(
    model: &GroundedUNet,
    store: &crate::numerics::ParamStore,
    schedule: &NoiseSchedule,
    prompt: &Tensor,
    track: &GroundingTrack,
    embedder: &dyn TextEmbedder,
    config: &SampleConfig,
    context: Option<ContextFrames>,
) -> Result<SampleOutput> {
    let frames = track.num_frames;
    let c = &model.config;
    let mut z = LatentVideo::zeros(frames, c.channels, config.height, config.width);
    let mut noise = RngStream::new(config.seed, NOISE);
    z.data = noise.normals(z.data.len());

    let ctx = match context {
        Some(cf) => {
            let v = cf.video;
            if v.frames > frames || v.channels != z.channels || v.height != z.height || v.width != z.width {
                return Err(Error::TensorShape(format!(
                    "context {}x{}x{}x{} does not fit a {frames}-frame latent",
                    v.frames, v.channels, v.height, v.width
                )));
            }
            let eps = noise.substream(1).normals(v.data.len());
            Some((v, eps))
        }
        None => None,
    };
    let replace = |z: &mut LatentVideo, t: usize| -> Result<()> {
        if let Some((v, eps)) = &ctx {
            let noised = add_noise(&v.data, t, eps, schedule)?;
            z.data[..noised.len()].copy_from_slice(&noised);
        }
        Ok(())
    };

    let null_prompt = uniform_prompt_table(embedder, "", frames, c.prompt_tokens);
    let null_track = if config.null_grounding { track.nulled() } else { track.clone() };
    let cond = Conditioning {
        prompt,
        track,
        embedder,
    };
    let uncond = Conditioning {
        prompt: &null_prompt,
        track: &null_track,
        embedder,
    };
    let mut trace = Vec::new();
    for (t, t_prev) in ddim_timesteps(schedule.num_steps(), config.steps)? {
        replace(&mut z, t)?;
        let (eps, decisions) =
            cfg_predict(model, store, &z, t, &cond, &uncond, config.guidance_scale, ForwardOptions::INFER)?;
        trace.extend(decisions);
        z.data = ddim_step(&z.data, &eps.data, t, t_prev, schedule)?;
    }
    replace(&mut z, 0)?;
    Ok(SampleOutput { video: z, trace })
}

pub fn sample_video(
    model: &GroundedUNet,
    store: &crate::numerics::ParamStore,
    schedule: &NoiseSchedule,
    prompt: &Tensor,
    track: &GroundingTrack,
    embedder: &dyn TextEmbedder,
    config: &SampleConfig,
) -> Result<SampleOutput> {
    sample_video_with_context(model, store, schedule, prompt, track, embedder, config, None)
}
