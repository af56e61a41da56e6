//! The spatial-temporal grounding layer.
//!
//! Activations of a clip are stacked as `[frames * tokens, width]`, frame
//! major. One block applies, each pre-normalized and residual:
//!
//! 1. self-attention within each frame, with an additive grounding bias;
//! 2. grounding attention over each frame's visual tokens plus its grounded
//!    tokens, keeping only the visual outputs and scaled by
//!    `gate * beta * tanh(gamma)`;
//! 3. cross-attention to the frame's prompt tokens;
//! 4. temporal attention across frames at each spatial position.

use super::grounded::GroundedFeature;
use crate::error::{Error, Result};
use crate::numerics::gradcheck::DifferentiableOp;
use crate::numerics::layers::{contiguous_groups, strided_groups, AttentionCache};
use crate::numerics::ops::LayerNormCache;
use crate::numerics::{
    Attention, AttentionGroup, Init, LayerNorm, Linear, ParamGroup, ParamId, ParamStore, RngStream, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub width: usize,
    pub text_width: usize,
    pub grounded_width: usize,
    /// Controllability of the grounding branch. Fixed, not trained.
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct StglBlock {
    pub config: BlockConfig,
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub ground_proj: Linear,
    pub norm_stga: LayerNorm,
    pub stga_attn: Attention,
    pub gamma: ParamId,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_temporal: LayerNorm,
    pub temporal_attn: Attention,
}

/// Everything a block consumes besides its input activations.
#[derive(Debug, Clone, Copy)]
pub struct BlockInput<'a> {
    pub frames: usize,
    pub tokens: usize,
    /// Per-frame key bias of length `tokens`; `None` means zero bias.
    pub bias: Option<&'a [Vec<f64>]>,
    /// Smoothed grounded tokens; `None` behaves like zero objects.
    pub grounded: Option<&'a GroundedFeature>,
    /// `[frames * prompt_tokens, text_width]`.
    pub prompt: &'a Tensor,
    pub prompt_tokens: usize,
    /// Dynamic gate value in `[0, 1]` multiplying the grounding branch.
    pub gate: f64,
    /// `false` evaluates the grounding-free base block: the grounding branch
    /// and frame temporal attention are left out.
    pub grounded_layers: bool,
    /// Keep the grounding branch even when its scale is zero so that
    /// `gamma` receives a gradient.
    pub need_grad: bool,
}

#[derive(Debug, Clone)]
pub struct SubLayerCache {
    norm: LayerNormCache,
    attn: AttentionCache,
}

#[derive(Debug, Clone)]
pub struct StgaCache {
    grounded: Tensor,
    visual_rows: usize,
    norm: LayerNormCache,
    attn: AttentionCache,
    branch: Tensor,
    gate: f64,
    tanh_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    self_attn: SubLayerCache,
    stga: Option<StgaCache>,
    cross: SubLayerCache,
    temporal: Option<SubLayerCache>,
}

impl BlockCache {
    /// Whether the grounding branch was evaluated.
    pub fn stga_evaluated(&self) -> bool {
        self.stga.is_some()
    }
}

/// Gradients flowing out of a block.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub dz: Tensor,
    /// Gradient for the grounded tokens, present when the grounding branch ran.
    pub dg: Option<Tensor>,
    pub dgate: f64,
}

fn same_groups(rows: Vec<Vec<usize>>) -> Vec<AttentionGroup> {
    rows.into_iter()
        .map(|r| AttentionGroup {
            queries: r.clone(),
            keys: r,
            bias: None,
        })
        .collect()
}

impl StglBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: BlockConfig, rng: &mut RngStream) -> Self {
        let w = config.width;
        let (b, g, t) = (ParamGroup::Backbone, ParamGroup::Grounding, ParamGroup::Temporal);
        let n = |s: &str| format!("{name}.{s}");
        Self {
            config,
            norm_self: LayerNorm::new(store, &n("norm_self"), w, b, rng),
            self_attn: Attention::new(store, &n("self_attn"), w, w, w, w, false, b, rng),
            ground_proj: Linear::new(store, &n("ground_proj"), config.grounded_width, w, Init::FanIn, g, rng),
            norm_stga: LayerNorm::new(store, &n("norm_stga"), w, g, rng),
            stga_attn: Attention::new(store, &n("stga_attn"), w, w, w, w, false, g, rng),
            gamma: store.add(n("gamma"), &[1], Init::Zeros, g, rng),
            norm_cross: LayerNorm::new(store, &n("norm_cross"), w, b, rng),
            cross_attn: Attention::new(store, &n("cross_attn"), w, config.text_width, w, w, false, b, rng),
            norm_temporal: LayerNorm::new(store, &n("norm_temporal"), w, t, rng),
            temporal_attn: Attention::new(store, &n("temporal_attn"), w, w, w, w, true, t, rng),
        }
    }

    fn check_rows(&self, z: &Tensor, frames: usize, tokens: usize) -> Result<()> {
        if z.rows() != frames * tokens || z.cols() != self.config.width {
            return Err(Error::TensorShape(format!(
                "block input is {:?}, expected [{}, {}]",
                z.shape(),
                frames * tokens,
                self.config.width
            )));
        }
        Ok(())
    }

    /// `z + SelfAttn(LN(z))` within each frame, with frame `n` using key
    /// bias `bias[n]`.
    pub fn self_attention(
        &self,
        store: &ParamStore,
        z: &Tensor,
        frames: usize,
        tokens: usize,
        bias: Option<&[Vec<f64>]>,
    ) -> Result<(Tensor, SubLayerCache)> {
        self.check_rows(z, frames, tokens)?;
        if let Some(b) = bias {
            if b.len() != frames {
                return Err(Error::BiasLength {
                    got: b.len(),
                    expected: frames,
                });
            }
            if let Some(bad) = b.iter().find(|v| v.len() != tokens) {
                return Err(Error::BiasLength {
                    got: bad.len(),
                    expected: tokens,
                });
            }
        }
        let (normed, norm) = self.norm_self.forward(store, z)?;
        let groups = contiguous_groups(frames, tokens)
            .into_iter()
            .enumerate()
            .map(|(n, rows)| AttentionGroup {
                queries: rows.clone(),
                keys: rows,
                bias: bias.map(|b| b[n].clone()),
            })
            .collect();
        let (mut out, attn) = self.self_attn.forward(store, &normed, &normed, groups)?;
        out.add_assign(z);
        Ok((out, SubLayerCache { norm, attn }))
    }

    fn sublayer_backward(
        &self,
        store: &mut ParamStore,
        norm: &LayerNorm,
        attn: &Attention,
        cache: &SubLayerCache,
        dy: &Tensor,
    ) -> Tensor {
        let (dq, dkv) = attn.backward(store, &cache.attn, dy);
        let mut dx = dy.clone();
        dx.add_assign(&norm.backward(store, &cache.norm, &dq.add(&dkv)));
        dx
    }

    pub fn self_attention_backward(&self, store: &mut ParamStore, cache: &SubLayerCache, dy: &Tensor) -> Tensor {
        self.sublayer_backward(store, &self.norm_self, &self.self_attn, cache, dy)
    }

    /// `gate * beta * tanh(gamma)` for the current parameters.
    pub fn branch_scale(&self, store: &ParamStore, gate: f64) -> f64 {
        gate * self.config.beta * store.value(self.gamma).data()[0].tanh()
    }

    /// Grounding attention. Returns `None` as cache when the branch is
    /// skipped, in which case the output equals `z` exactly.
    #[allow(clippy::too_many_arguments)]
    pub fn stga(
        &self,
        store: &ParamStore,
        z: &Tensor,
        frames: usize,
        tokens: usize,
        grounded: Option<&GroundedFeature>,
        gate: f64,
        need_grad: bool,
    ) -> Result<(Tensor, Option<StgaCache>)> {
        self.check_rows(z, frames, tokens)?;
        let g = match grounded {
            Some(g) if g.objects > 0 => g,
            _ => return Ok((z.clone(), None)),
        };
        if g.width() != self.config.grounded_width {
            return Err(Error::GroundedWidth(format!(
                "grounded tokens have width {}, the block expects {}",
                g.width(),
                self.config.grounded_width
            )));
        }
        if g.frames != frames {
            return Err(Error::TensorShape(format!(
                "grounded tokens cover {} frames, activations {frames}",
                g.frames
            )));
        }
        let tanh_gamma = store.value(self.gamma).data()[0].tanh();
        let scale = gate * self.config.beta * tanh_gamma;
        if gate == 0.0 || (scale == 0.0 && !need_grad) {
            return Ok((z.clone(), None));
        }
        let m = g.objects;
        let visual_rows = frames * tokens;
        let projected = self.ground_proj.forward(store, &g.tokens)?;
        let (normed, norm) = self.norm_stga.forward(store, &Tensor::vstack(&[z, &projected]))?;
        let queries = normed.slice_rows(0, visual_rows);
        let groups = (0..frames)
            .map(|n| {
                let rows: Vec<usize> = (n * tokens..(n + 1) * tokens).collect();
                let mut keys = rows.clone();
                keys.extend(visual_rows + n * m..visual_rows + (n + 1) * m);
                AttentionGroup {
                    queries: rows,
                    keys,
                    bias: None,
                }
            })
            .collect();
        let (branch, attn) = self.stga_attn.forward(store, &queries, &normed, groups)?;
        let mut out = z.clone();
        out.axpy(scale, &branch);
        Ok((
            out,
            Some(StgaCache {
                grounded: g.tokens.clone(),
                visual_rows,
                norm,
                attn,
                branch,
                gate,
                tanh_gamma,
            }),
        ))
    }

    /// Returns `(dz, dg, dgate)` and accumulates parameter gradients,
    /// including `gamma`.
    pub fn stga_backward(&self, store: &mut ParamStore, cache: &StgaCache, dy: &Tensor) -> (Tensor, Tensor, f64) {
        let beta = self.config.beta;
        let scale = cache.gate * beta * cache.tanh_gamma;
        let dscale: f64 = dy.data().iter().zip(cache.branch.data()).map(|(a, b)| a * b).sum();
        let dgamma = dscale * cache.gate * beta * (1.0 - cache.tanh_gamma * cache.tanh_gamma);
        store.accumulate_slice(self.gamma, &[dgamma]);
        let dgate = dscale * beta * cache.tanh_gamma;

        let dbranch = dy.scale(scale);
        let (dq, mut dnormed) = self.stga_attn.backward(store, &cache.attn, &dbranch);
        for r in 0..cache.visual_rows {
            for (a, b) in dnormed.row_mut(r).iter_mut().zip(dq.row(r)) {
                *a += b;
            }
        }
        let dstack = self.norm_stga.backward(store, &cache.norm, &dnormed);
        let mut dz = dstack.slice_rows(0, cache.visual_rows);
        dz.add_assign(dy);
        let dproj = dstack.slice_rows(cache.visual_rows, dstack.rows());
        let dg = self.ground_proj.backward(store, &cache.grounded, &dproj);
        (dz, dg, dgate)
    }

    /// `z + CrossAttn(LN(z), prompt)`; frame `n` attends to prompt rows
    /// `n * prompt_tokens ..`.
    pub fn cross_attention(
        &self,
        store: &ParamStore,
        z: &Tensor,
        frames: usize,
        tokens: usize,
        prompt: &Tensor,
        prompt_tokens: usize,
    ) -> Result<(Tensor, SubLayerCache)> {
        self.check_rows(z, frames, tokens)?;
        if prompt.rows() != frames * prompt_tokens || prompt_tokens == 0 {
            return Err(Error::TensorShape(format!(
                "prompt has {} rows, expected {frames} frames x {prompt_tokens} tokens",
                prompt.rows()
            )));
        }
        let (normed, norm) = self.norm_cross.forward(store, z)?;
        let groups = (0..frames)
            .map(|n| AttentionGroup {
                queries: (n * tokens..(n + 1) * tokens).collect(),
                keys: (n * prompt_tokens..(n + 1) * prompt_tokens).collect(),
                bias: None,
            })
            .collect();
        let (mut out, attn) = self.cross_attn.forward(store, &normed, prompt, groups)?;
        out.add_assign(z);
        Ok((out, SubLayerCache { norm, attn }))
    }

    pub fn cross_attention_backward(&self, store: &mut ParamStore, cache: &SubLayerCache, dy: &Tensor) -> Tensor {
        // The prompt is an input, not a parameter; its gradient is dropped.
        let (dq, _) = self.cross_attn.backward(store, &cache.attn, dy);
        let mut dx = dy.clone();
        dx.add_assign(&self.norm_cross.backward(store, &cache.norm, &dq));
        dx
    }

    /// `z + TempAttn(LN(z))` across frames at each spatial position.
    pub fn frame_temporal_attention(
        &self,
        store: &ParamStore,
        z: &Tensor,
        frames: usize,
        tokens: usize,
    ) -> Result<(Tensor, SubLayerCache)> {
        self.check_rows(z, frames, tokens)?;
        let (normed, norm) = self.norm_temporal.forward(store, z)?;
        let groups = same_groups(strided_groups(frames, tokens));
        let (mut out, attn) = self.temporal_attn.forward(store, &normed, &normed, groups)?;
        out.add_assign(z);
        Ok((out, SubLayerCache { norm, attn }))
    }

    pub fn frame_temporal_backward(&self, store: &mut ParamStore, cache: &SubLayerCache, dy: &Tensor) -> Tensor {
        self.sublayer_backward(store, &self.norm_temporal, &self.temporal_attn, cache, dy)
    }

    pub fn forward(&self, store: &ParamStore, z: &Tensor, input: &BlockInput) -> Result<(Tensor, BlockCache)> {
        let (f, t) = (input.frames, input.tokens);
        let (h, self_attn) = self.self_attention(store, z, f, t, input.bias)?;
        let (h, stga) = if input.grounded_layers {
            self.stga(store, &h, f, t, input.grounded, input.gate, input.need_grad)?
        } else {
            (h, None)
        };
        let (h, cross) = self.cross_attention(store, &h, f, t, input.prompt, input.prompt_tokens)?;
        let (h, temporal) = if input.grounded_layers {
            let (h, c) = self.frame_temporal_attention(store, &h, f, t)?;
            (h, Some(c))
        } else {
            (h, None)
        };
        Ok((
            h,
            BlockCache {
                self_attn,
                stga,
                cross,
                temporal,
            },
        ))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &BlockCache, dy: &Tensor) -> BlockGrads {
        let mut d = dy.clone();
        if let Some(c) = &cache.temporal {
            d = self.frame_temporal_backward(store, c, &d);
        }
        d = self.cross_attention_backward(store, &cache.cross, &d);
        let (mut dg, mut dgate) = (None, 0.0);
        if let Some(c) = &cache.stga {
            let (dz, g, gate) = self.stga_backward(store, c, &d);
            d = dz;
            dg = Some(g);
            dgate = gate;
        }
        d = self.self_attention_backward(store, &cache.self_attn, &d);
        BlockGrads { dz: d, dg, dgate }
    }
}

/// One block application; see [`StglBlock::forward`].
pub fn stgl_block_forward(block: &StglBlock, store: &ParamStore, z: &Tensor, input: &BlockInput) -> Result<Tensor> {
    Ok(block.forward(store, z, input)?.0)
}

/// Grounding attention of a single frame as a differentiable function of
/// `[z (tokens x width), g (objects x grounded width), gamma (1)]`, at a fixed
/// gate value.
pub struct StgaGradOp {
    pub block: StglBlock,
    pub store: ParamStore,
    pub gate: f64,
}

impl StgaGradOp {
    /// A freshly initialized block; `gamma` is supplied as an input.
    pub fn random(config: BlockConfig, gate: f64, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, crate::numerics::rng::INIT);
        let block = StglBlock::new(&mut store, "blk", config, &mut rng);
        Self { block, store, gate }
    }

    fn prepared(&self, inputs: &[Tensor]) -> Result<(ParamStore, GroundedFeature)> {
        if inputs.len() != 3 || inputs[2].len() != 1 {
            return Err(Error::TensorShape("stga expects [z, g, gamma]".into()));
        }
        let mut store = self.store.clone();
        store.value_mut(self.block.gamma).data_mut()[0] = inputs[2].data()[0];
        let g = GroundedFeature {
            frames: 1,
            objects: inputs[1].rows(),
            tokens: inputs[1].clone(),
        };
        Ok((store, g))
    }
}

impl DifferentiableOp for StgaGradOp {
    fn name(&self) -> &str {
        "stga"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (store, g) = self.prepared(inputs)?;
        let t = inputs[0].rows();
        Ok(self.block.stga(&store, &inputs[0], 1, t, Some(&g), self.gate, true)?.0)
    }

    fn backward(&self, inputs: &[Tensor], dout: &Tensor) -> Result<Vec<Tensor>> {
        let (mut store, g) = self.prepared(inputs)?;
        store.zero_grads();
        let t = inputs[0].rows();
        let (_, cache) = self.block.stga(&store, &inputs[0], 1, t, Some(&g), self.gate, true)?;
        let Some(cache) = cache else {
            return Ok(vec![
                Tensor::zeros(inputs[0].shape()),
                Tensor::zeros(inputs[1].shape()),
                Tensor::zeros(inputs[2].shape()),
            ]);
        };
        let (dz, dg, _) = self.block.stga_backward(&mut store, &cache, dout);
        let dgamma = store.get(self.block.gamma).grad.clone();
        Ok(vec![dz, dg, dgamma.reshape(inputs[2].shape())?])
    }
}
