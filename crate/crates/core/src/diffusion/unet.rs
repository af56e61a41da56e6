//! A desk-scale Grounded-UNet: two down levels, a middle level and two up
//! levels, each running one grounding block on `[frames * tokens, width]`
//! activations.
//!
//! ```text
//! in_proj + time ─ down0 ─┬─ pool ─ widen ─ down1 ─┬─ pool ─ widen ─ mid
//!                         │                        │                  │
//!      out_proj ─ up0 ─ merge ─ upsample ─ up1 ─ merge ─────── upsample
//! ```
//!
//! The five blocks are the gated layers, indexed in the order down0, down1,
//! mid, up1, up0.

use super::video::LatentVideo;
use crate::dgn::{relevance, relevance_backward, GateDecision, GateMode, GateNoise, GateParams, RelevanceCache};
use crate::error::{Error, Result};
use crate::grounding::{frame_grounding_map, map_to_attention_bias, GroundingConfig, GroundingTrack, TrackObject};
use crate::numerics::layers::MlpLayerCache;
use crate::numerics::rng::INIT;
use crate::numerics::{Init, Linear, Mlp, ParamGroup, ParamStore, RngStream, Tensor};
use crate::stgl::{
    BlockCache, BlockConfig, BlockInput, EncoderCache, GroundedEncoder, GroundedFeature, GroundedTemporal,
    GroundedTemporalCache, StglBlock, TextEmbedder,
};

pub const GATED_LAYERS: usize = 5;
pub const LAYER_NAMES: [&str; GATED_LAYERS] = ["down0", "down1", "mid", "up1", "up0"];
const LAYER_LEVELS: [usize; GATED_LAYERS] = [0, 1, 2, 1, 0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UNetConfig {
    pub channels: usize,
    pub base_width: usize,
    pub text_width: usize,
    pub grounded_width: usize,
    pub num_freqs: usize,
    pub prompt_tokens: usize,
    /// Controllability of the grounding attention branch.
    pub beta: f64,
    /// Scale of the grounding-map bias added to self-attention logits.
    pub bias_scale: f64,
    pub grounding: GroundingConfig,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            base_width: 16,
            text_width: 16,
            grounded_width: 16,
            num_freqs: 4,
            prompt_tokens: 4,
            beta: 1.0,
            bias_scale: 1.0,
            grounding: GroundingConfig::default(),
        }
    }
}

impl UNetConfig {
    pub fn level_width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// How the dynamic gates are set during a forward pass.
#[derive(Debug, Clone)]
pub enum GatePolicy {
    /// Noisy dual gates drawn from per-layer streams.
    Train(GateNoise),
    /// Hard gates of the clean relevance.
    Infer,
    /// Every gate fully open, without evaluating the gate network.
    Open,
    /// Fixed gate values, one per gated layer.
    Forced(Vec<f64>),
}

/// What the network is conditioned on.
#[derive(Clone, Copy)]
pub struct Conditioning<'a> {
    /// `[frames * prompt_tokens, text_width]`.
    pub prompt: &'a Tensor,
    pub track: &'a GroundingTrack,
    pub embedder: &'a dyn TextEmbedder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// `false` runs the grounding-free base network: no grounded tokens,
    /// grounding attention or frame temporal attention. Self-attention
    /// still receives the grounding-map bias.
    pub grounded: bool,
    pub need_grad: bool,
}

impl ForwardOptions {
    pub const INFER: Self = Self {
        grounded: true,
        need_grad: false,
    };
    pub const BASE: Self = Self {
        grounded: false,
        need_grad: false,
    };
}

#[derive(Debug, Clone)]
pub struct GroundedUNet {
    pub config: UNetConfig,
    pub time_mlp: Mlp,
    pub in_proj: Linear,
    pub blocks: Vec<StglBlock>,
    pub widen: Vec<Linear>,
    pub merge: Vec<Linear>,
    pub out_proj: Linear,
    pub encoder: GroundedEncoder,
    pub grounded_temporal: GroundedTemporal,
    pub gates: Vec<GateParams>,
}

#[derive(Debug, Clone)]
pub struct UNetOutput {
    pub eps: LatentVideo,
    /// Gate decisions of this pass, one per gated layer, when the gate
    /// network was evaluated.
    pub decisions: Vec<GateDecision>,
    /// Gate value applied at each gated layer.
    pub gates: Vec<f64>,
}

struct GroundedCache {
    source: GroundedFeature,
    encoder: EncoderCache,
    temporal: GroundedTemporalCache,
    used_by_blocks: bool,
}

pub struct UNetCache {
    frames: usize,
    height: usize,
    width: usize,
    x: Tensor,
    time: MlpLayerCache,
    blocks: Vec<BlockCache>,
    pooled: Vec<Tensor>,
    concat: Vec<Tensor>,
    top: Tensor,
    grounded: Option<GroundedCache>,
    relevance: Vec<RelevanceCache>,
    decisions: Vec<GateDecision>,
}

/// `[sin(t f_k) ..., cos(t f_k) ...]` with `f_k = 10000^(-k / half)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * f).sin();
        out[half + k] = (t as f64 * f).cos();
    }
    out
}

/// 2x2 average pooling of frame-stacked tokens.
pub fn area_pool(x: &Tensor, frames: usize, height: usize, width: usize) -> Tensor {
    let (h2, w2, c) = (height / 2, width / 2, x.cols());
    let mut out = Tensor::zeros(&[frames * h2 * w2, c]);
    for n in 0..frames {
        for y in 0..h2 {
            for xx in 0..w2 {
                let dst = n * h2 * w2 + y * w2 + xx;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = n * height * width + (2 * y + dy) * width + 2 * xx + dx;
                    for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(src)) {
                        *o += 0.25 * v;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`area_pool`]; `height` and `width` are the unpooled sizes.
pub fn area_pool_backward(dy: &Tensor, frames: usize, height: usize, width: usize) -> Tensor {
    let (h2, w2, c) = (height / 2, width / 2, dy.cols());
    let mut out = Tensor::zeros(&[frames * height * width, c]);
    for n in 0..frames {
        for y in 0..height {
            for x in 0..width {
                let src = n * h2 * w2 + (y / 2) * w2 + x / 2;
                for (o, v) in out.row_mut(n * height * width + y * width + x).iter_mut().zip(dy.row(src)) {
                    *o = 0.25 * v;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling; `height` and `width` are the input sizes.
pub fn upsample_nearest(x: &Tensor, frames: usize, height: usize, width: usize) -> Tensor {
    let (h2, w2) = (2 * height, 2 * width);
    let mut rows = Vec::with_capacity(frames * h2 * w2);
    for n in 0..frames {
        for y in 0..h2 {
            for xx in 0..w2 {
                rows.push(n * height * width + (y / 2) * width + xx / 2);
            }
        }
    }
    x.gather_rows(&rows)
}

/// Adjoint of [`upsample_nearest`]; `height` and `width` are the input sizes.
pub fn upsample_nearest_backward(dy: &Tensor, frames: usize, height: usize, width: usize) -> Tensor {
    let (h2, w2) = (2 * height, 2 * width);
    let mut rows = Vec::with_capacity(frames * h2 * w2);
    for n in 0..frames {
        for y in 0..h2 {
            for xx in 0..w2 {
                rows.push(n * height * width + (y / 2) * width + xx / 2);
            }
        }
    }
    let mut out = Tensor::zeros(&[frames * height * width, dy.cols()]);
    out.scatter_add_rows(&rows, dy);
    out
}

/// A one-object track with every slot missing: its grounded tokens are the
/// null grounded feature.
pub fn null_object_track(frames: usize) -> GroundingTrack {
    GroundingTrack::new(
        frames,
        vec![TrackObject {
            phrase: String::new(),
            conditions: vec![None; frames],
        }],
    )
    .expect("null track is valid")
}

impl GroundedUNet {
    pub fn new(config: UNetConfig, store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, INIT);
        let rng = &mut rng;
        let w0 = config.base_width;
        let bb = ParamGroup::Backbone;
        let time_mlp = Mlp::new(store, "unet.time", w0, 2 * w0, w0, Init::FanIn, bb, rng);
        let in_proj = Linear::new(store, "unet.in_proj", config.channels, w0, Init::FanIn, bb, rng);
        let mut blocks = Vec::with_capacity(GATED_LAYERS);
        for (name, level) in LAYER_NAMES.iter().zip(LAYER_LEVELS) {
            let bc = BlockConfig {
                width: config.level_width(level),
                text_width: config.text_width,
                grounded_width: config.grounded_width,
                beta: config.beta,
            };
            blocks.push(StglBlock::new(store, &format!("unet.{name}"), bc, rng));
        }
        let widen = (0..2)
            .map(|l| {
                let (a, b) = (config.level_width(l), config.level_width(l + 1));
                Linear::new(store, &format!("unet.widen{l}"), a, b, Init::FanIn, bb, rng)
            })
            .collect();
        let merge = (0..2)
            .map(|l| {
                let inp = config.level_width(l + 1) + config.level_width(l);
                Linear::new(store, &format!("unet.merge{l}"), inp, config.level_width(l), Init::FanIn, bb, rng)
            })
            .collect();
        let out_proj = Linear::new(store, "unet.out_proj", w0, config.channels, Init::FanIn, bb, rng);
        let encoder = GroundedEncoder::new(
            store,
            "ground.encoder",
            config.text_width,
            config.num_freqs,
            config.grounded_width,
            rng,
        );
        let grounded_temporal = GroundedTemporal::new(store, "ground.temporal", config.grounded_width, rng);
        let gates = (0..GATED_LAYERS)
            .map(|i| GateParams::new(store, &format!("dgn.layer{i}"), config.grounded_width, rng))
            .collect();
        Self {
            config,
            time_mlp,
            in_proj,
            blocks,
            widen,
            merge,
            out_proj,
            encoder,
            grounded_temporal,
            gates,
        }
    }

    fn check_input(&self, z: &LatentVideo, cond: &Conditioning) -> Result<()> {
        let c = &self.config;
        if z.channels != c.channels || z.height == 0 || z.width == 0 || z.height % 4 != 0 || z.width % 4 != 0 {
            return Err(Error::UnetShape(format!(
                "latent {}x{}x{} needs {} channels and sides divisible by 4",
                z.channels, z.height, z.width, c.channels
            )));
        }
        if z.frames == 0 {
            return Err(Error::UnetShape("a video needs at least one frame".into()));
        }
        if cond.track.num_frames != z.frames {
            return Err(Error::TrackFrames(format!(
                "track has {} frames, video {}",
                cond.track.num_frames, z.frames
            )));
        }
        if cond.prompt.rows() != z.frames * c.prompt_tokens || cond.prompt.cols() != c.text_width {
            return Err(Error::UnetShape(format!(
                "prompt table is {:?}, expected [{}, {}]",
                cond.prompt.shape(),
                z.frames * c.prompt_tokens,
                c.text_width
            )));
        }
        Ok(())
    }

    /// Per-level, per-frame self-attention biases.
    fn biases(&self, track: &GroundingTrack, height: usize, width: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut maps = Vec::with_capacity(track.num_frames);
        for j in 0..track.num_frames {
            maps.push(frame_grounding_map(track, j, width, height, &self.config.grounding)?);
        }
        (0..3)
            .map(|l| {
                maps.iter()
                    .map(|m| map_to_attention_bias(m, width >> l, height >> l, self.config.bias_scale))
                    .collect()
            })
            .collect()
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        z_t: &LatentVideo,
        t: usize,
        cond: &Conditioning,
        opts: ForwardOptions,
        gates: &mut GatePolicy,
    ) -> Result<(UNetOutput, UNetCache)> {
        self.check_input(z_t, cond)?;
        let (n, h, w) = (z_t.frames, z_t.height, z_t.width);
        let biases = self.biases(cond.track, h, w)?;

        let mut grounded = None;
        let mut relevance_caches = Vec::new();
        let mut decisions = Vec::new();
        let mut gate_values = vec![1.0; GATED_LAYERS];
        if opts.grounded {
            let has_objects = cond.track.num_objects() > 0;
            let wants_gates = matches!(gates, GatePolicy::Train(_) | GatePolicy::Infer);
            if has_objects || wants_gates {
                let null_track;
                let source_track = if has_objects {
                    cond.track
                } else {
                    null_track = null_object_track(n);
                    &null_track
                };
                let (g0, encoder) = self.encoder.encode(store, source_track, cond.embedder)?;
                let (source, temporal) = self.grounded_temporal.forward(store, &g0)?;
                grounded = Some(GroundedCache {
                    source,
                    encoder,
                    temporal,
                    used_by_blocks: has_objects,
                });
            }
            match gates {
                GatePolicy::Open => {}
                GatePolicy::Forced(v) => {
                    if v.len() != GATED_LAYERS {
                        return Err(Error::TensorShape(format!(
                            "{} forced gate values for {GATED_LAYERS} gated layers",
                            v.len()
                        )));
                    }
                    gate_values.copy_from_slice(v);
                }
                GatePolicy::Train(_) | GatePolicy::Infer => {
                    let source = &grounded.as_ref().expect("encoded above").source;
                    for (i, params) in self.gates.iter().enumerate() {
                        let (r, rc) = relevance(store, params, source)?;
                        let d = match gates {
                            GatePolicy::Train(noise) => noise.sample(i, r, GateMode::Train),
                            _ => crate::dgn::gate_from_noise(i, r, 0.0, 0.0, GateMode::Infer),
                        };
                        gate_values[i] = d.value;
                        decisions.push(d);
                        relevance_caches.push(rc);
                    }
                }
            }
        }
        let block_grounded = grounded.as_ref().filter(|g| g.used_by_blocks).map(|g| &g.source);

        let x = z_t.to_tokens();
        let time_in = Tensor::matrix(1, self.config.base_width, timestep_embedding(t, self.config.base_width))?;
        let (temb, time) = self.time_mlp.forward(store, &time_in)?;
        let mut hcur = self.in_proj.forward(store, &x)?;
        for r in 0..hcur.rows() {
            for (a, b) in hcur.row_mut(r).iter_mut().zip(temb.row(0)) {
                *a += b;
            }
        }

        let mut block_caches = Vec::with_capacity(GATED_LAYERS);
        let mut pooled = Vec::with_capacity(2);
        let mut concat = Vec::with_capacity(2);
        let mut skips: Vec<Tensor> = Vec::with_capacity(2);
        for (i, block) in self.blocks.iter().enumerate() {
            let level = LAYER_LEVELS[i];
            let (lh, lw) = (h >> level, w >> level);
            if i == 3 || i == 4 {
                // Up path: upsample from the level below and merge the skip.
                let up = upsample_nearest(&hcur, n, lh / 2, lw / 2);
                let skip = skips.pop().expect("skip for every up level");
                let cat = Tensor::hcat(&up, &skip);
                hcur = self.merge[level].forward(store, &cat)?;
                concat.push(cat);
            }
            let input = BlockInput {
                frames: n,
                tokens: lh * lw,
                bias: Some(&biases[level]),
                grounded: block_grounded,
                prompt: cond.prompt,
                prompt_tokens: self.config.prompt_tokens,
                gate: gate_values[i],
                grounded_layers: opts.grounded,
                need_grad: opts.need_grad,
            };
            let (out, cache) = block.forward(store, &hcur, &input)?;
            block_caches.push(cache);
            hcur = out;
            if i < 2 {
                skips.push(hcur.clone());
                let p = area_pool(&hcur, n, lh, lw);
                hcur = self.widen[level].forward(store, &p)?;
                pooled.push(p);
            }
        }
        let eps_tokens = self.out_proj.forward(store, &hcur)?;
        let eps = LatentVideo::from_tokens(&eps_tokens, n, h, w)?;
        Ok((
            UNetOutput {
                eps,
                decisions: decisions.clone(),
                gates: gate_values,
            },
            UNetCache {
                frames: n,
                height: h,
                width: w,
                x,
                time,
                blocks: block_caches,
                pooled,
                concat,
                top: hcur,
                grounded,
                relevance: relevance_caches,
                decisions,
            },
        ))
    }

    /// Accumulates parameter gradients of `<deps, output>` plus
    /// `gate_penalty * sum(gate values)` when the gate network ran.
    pub fn backward(&self, store: &mut ParamStore, cache: &UNetCache, deps: &LatentVideo, gate_penalty: f64) {
        let (n, h, w) = (cache.frames, cache.height, cache.width);
        let dtop = deps.to_tokens();
        let mut d = self.out_proj.backward(store, &cache.top, &dtop);
        let mut dg_total: Option<Tensor> = None;
        let mut add_dg = |dg: Tensor| match &mut dg_total {
            Some(acc) => acc.add_assign(&dg),
            None => dg_total = Some(dg),
        };
        let mut dgates = [0.0; GATED_LAYERS];
        let mut dskips: Vec<Tensor> = Vec::with_capacity(2);
        for i in (0..GATED_LAYERS).rev() {
            let level = LAYER_LEVELS[i];
            let (lh, lw) = (h >> level, w >> level);
            if i < 2 {
                // Undo widen + pool, then add the skip gradient.
                let dp = self.widen[level].backward(store, &cache.pooled[i], &d);
                d = area_pool_backward(&dp, n, lh, lw);
                d.add_assign(&dskips.pop().expect("skip gradient"));
            }
            let grads = self.blocks[i].backward(store, &cache.blocks[i], &d);
            d = grads.dz;
            dgates[i] = grads.dgate;
            if let Some(dg) = grads.dg {
                add_dg(dg);
            }
            if i == 3 || i == 4 {
                let ci = i - 3;
                let dcat = self.merge[level].backward(store, &cache.concat[ci], &d);
                let up_width = self.config.level_width(level + 1);
                let (dup, dskip) = dcat.hsplit(up_width);
                dskips.push(dskip);
                d = upsample_nearest_backward(&dup, n, lh / 2, lw / 2);
            }
        }
        let dtemb = Tensor::matrix(1, self.config.base_width, d.col_sums()).expect("time row");
        self.time_mlp.backward(store, &cache.time, &dtemb);
        self.in_proj.backward(store, &cache.x, &d);

        for (i, dec) in cache.decisions.iter().enumerate() {
            let dr = (dgates[i] + gate_penalty) * dec.dvalue_drelevance();
            if dr != 0.0 {
                add_dg(relevance_backward(store, &self.gates[i], &cache.relevance[i], dr));
            }
        }
        if let (Some(gc), Some(dg)) = (&cache.grounded, dg_total) {
            let dg0 = self.grounded_temporal.backward(store, &gc.temporal, &dg);
            self.encoder.backward(store, &gc.encoder, &dg0);
        }
    }
}

/// The network's noise prediction for `z_t` at timestep `t`.
pub fn unet_forward(
    model: &GroundedUNet,
    store: &ParamStore,
    z_t: &LatentVideo,
    t: usize,
    cond: &Conditioning,
    opts: ForwardOptions,
    gates: &mut GatePolicy,
) -> Result<UNetOutput> {
    Ok(model.forward(store, z_t, t, cond, opts, gates)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_and_upsample_are_adjoint_pairs() {
        let mut rng = RngStream::new(1, "data");
        let x = Tensor::matrix(2 * 16, 3, rng.normals(96)).unwrap();
        let y = Tensor::matrix(2 * 4, 3, rng.normals(24)).unwrap();
        let lhs: f64 = area_pool(&x, 2, 4, 4).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(area_pool_backward(&y, 2, 4, 4).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let u = Tensor::matrix(2 * 4, 3, rng.normals(24)).unwrap();
        let v = Tensor::matrix(2 * 16, 3, rng.normals(96)).unwrap();
        let lhs: f64 = upsample_nearest(&u, 2, 2, 2).data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.data().iter().zip(upsample_nearest_backward(&v, 2, 2, 2).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn timestep_embedding_layout() {
        let e = timestep_embedding(3, 8);
        assert_eq!(e[0], 3f64.sin());
        assert_eq!(e[4], 3f64.cos());
    }
}
