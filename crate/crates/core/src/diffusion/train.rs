//! Multi-stage training: each stage updates one parameter group with plain
//! SGD on the noise-prediction loss.

use std::fmt;
use std::str::FromStr;

use super::sample::uniform_prompt_table;
use super::schedule::{add_noise, NoiseSchedule};
use super::unet::{Conditioning, ForwardOptions, GatePolicy, GroundedUNet, GATED_LAYERS};
use super::video::LatentVideo;
use crate::dgn::GateNoise;
use crate::error::{Error, Result};
use crate::grounding::GroundingTrack;
use crate::numerics::rng::{COND_DROP, NOISE, TIMESTEP};
use crate::numerics::{ParamGroup, ParamStore, RngStream, Tensor};
use crate::stgl::TextEmbedder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// The grounding-free denoiser.
    Base,
    /// Grounded-token encoder, its temporal attention and grounding attention.
    Stga,
    /// Frame temporal attention.
    Temporal,
    /// Dynamic gate network.
    Dgn,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Base, Stage::Stga, Stage::Temporal, Stage::Dgn];

    pub fn group(self) -> ParamGroup {
        match self {
            Stage::Base => ParamGroup::Backbone,
            Stage::Stga => ParamGroup::Grounding,
            Stage::Temporal => ParamGroup::Temporal,
            Stage::Dgn => ParamGroup::Gate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Stga => "stga",
            Stage::Temporal => "temporal",
            Stage::Dgn => "dgn",
        }
    }

    /// The base stage trains the grounding-free network; later stages run
    /// the full model.
    pub fn forward_options(self) -> ForwardOptions {
        ForwardOptions {
            grounded: self != Stage::Base,
            need_grad: true,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::Config {
            key: "stage".into(),
            msg: format!("unknown stage `{s}`, expected base, stga, temporal or dgn"),
        })
    }
}

/// Trainable flag of every parameter for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageMask {
    pub stage: Stage,
    pub flags: Vec<(String, bool)>,
}

impl StageMask {
    pub fn new(stage: Stage, store: &ParamStore) -> Self {
        let flags = store.iter().map(|p| (p.name.clone(), p.group == stage.group())).collect();
        Self { stage, flags }
    }

    pub fn apply(&self, store: &mut ParamStore) {
        for (p, (name, flag)) in store.iter_mut().zip(&self.flags) {
            debug_assert_eq!(&p.name, name);
            p.trainable = *flag;
        }
    }
}

/// One training video with its caption table and grounding track.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub z0: LatentVideo,
    /// `[frames * prompt_tokens, text_width]`.
    pub prompt: Tensor,
    pub track: GroundingTrack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Probability of replacing caption and grounding by their null versions.
    pub cond_drop: f64,
    /// Weight of the gate-usage penalty in the gate stage. Off by default.
    pub gate_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            cond_drop: 0.1,
            gate_penalty: 0.0,
        }
    }
}

/// Random streams owned by a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    noise: RngStream,
    timestep: RngStream,
    cond_drop: RngStream,
    gates: GateNoise,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            step: 0,
            noise: RngStream::new(seed, NOISE),
            timestep: RngStream::new(seed, TIMESTEP),
            cond_drop: RngStream::new(seed, COND_DROP),
            gates: GateNoise::new(seed, GATED_LAYERS),
        }
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / pred.len() as f64
}

/// One SGD step on the mean over `batch` of the per-entry mean squared
/// noise-prediction error. Only parameters of `stage` move. Returns the loss.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    model: &GroundedUNet,
    store: &mut ParamStore,
    batch: &[TrainItem],
    stage: Stage,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    state: &mut TrainState,
    embedder: &dyn TextEmbedder,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    StageMask::new(stage, store).apply(store);
    store.zero_grads();
    let opts = stage.forward_options();
    let penalty = if stage == Stage::Dgn { config.gate_penalty } else { 0.0 };
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        let t = state.timestep.int_inclusive(1, schedule.num_steps());
        let eps = state.noise.normals(item.z0.data.len());
        let drop = state.cond_drop.uniform() < config.cond_drop;
        let z_t = LatentVideo {
            data: add_noise(&item.z0.data, t, &eps, schedule)?,
            ..item.z0.clone()
        };
        let (null_prompt, null_track);
        let cond = if drop {
            null_prompt = uniform_prompt_table(embedder, "", item.z0.frames, model.config.prompt_tokens);
            null_track = item.track.nulled();
            Conditioning {
                prompt: &null_prompt,
                track: &null_track,
                embedder,
            }
        } else {
            Conditioning {
                prompt: &item.prompt,
                track: &item.track,
                embedder,
            }
        };
        let mut policy = if stage == Stage::Dgn {
            GatePolicy::Train(state.gates.clone())
        } else {
            GatePolicy::Open
        };
        let (out, cache) = model.forward(store, &z_t, t, &cond, opts, &mut policy)?;
        if let GatePolicy::Train(g) = policy {
            state.gates = g;
        }
        let n = eps.len() as f64;
        total += scale * mse(&out.eps.data, &eps);
        total += scale * penalty * out.gates.iter().sum::<f64>();
        let deps = LatentVideo {
            data: out.eps.data.iter().zip(&eps).map(|(p, e)| scale * 2.0 * (p - e) / n).collect(),
            ..out.eps.clone()
        };
        model.backward(store, &cache, &deps, scale * penalty);
    }
    store.sgd_step(config.learning_rate);
    state.step += 1;
    Ok(total)
}

/// Loss at fixed `(t, eps)` pairs without updating anything: item `i` is
/// noised at every timestep in `timesteps` with noise from substream `i`.
pub fn evaluation_loss(
    model: &GroundedUNet,
    store: &ParamStore,
    batch: &[TrainItem],
    stage: Stage,
    schedule: &NoiseSchedule,
    timesteps: &[usize],
    seed: u64,
    embedder: &dyn TextEmbedder,
) -> Result<f64> {
    if batch.is_empty() || timesteps.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let base = RngStream::new(seed, NOISE);
    let opts = ForwardOptions {
        need_grad: false,
        ..stage.forward_options()
    };
    let mut total = 0.0;
    for (i, item) in batch.iter().enumerate() {
        let mut rng = base.substream(i as u64);
        let cond = Conditioning {
            prompt: &item.prompt,
            track: &item.track,
            embedder,
        };
        for &t in timesteps {
            let eps = rng.normals(item.z0.data.len());
            let z_t = LatentVideo {
                data: add_noise(&item.z0.data, t, &eps, schedule)?,
                ..item.z0.clone()
            };
            let out = model.forward(store, &z_t, t, &cond, opts, &mut GatePolicy::Open)?.0;
            total += mse(&out.eps.data, &eps);
        }
    }
    Ok(total / (batch.len() * timesteps.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("warmup".parse::<Stage>().unwrap_err().code(), "config");
    }
}
