//! Per-layer relevance and the Logistic-noise dual gate.

use crate::error::{Error, Result};
use crate::numerics::gradcheck::DifferentiableOp;
use crate::numerics::layers::MlpLayerCache;
use crate::numerics::ops::softmax_backward;
use crate::numerics::rng::{GATE_EPSILON, GATE_UNIFORM};
use crate::numerics::tensor::dot;
use crate::numerics::{sigmoid, softmax, Init, Mlp, ParamGroup, ParamId, ParamStore, RngStream, Tensor};
use crate::stgl::GroundedFeature;

/// Hidden width of the relevance MLP.
pub fn low_rank_width(grounded_width: usize) -> usize {
    (grounded_width / 8).max(4)
}

/// Gate parameters of one gated layer: its grounding-aware embedding and
/// the low-rank relevance MLP.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub embedding: ParamId,
    pub mlp: Mlp,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, name: &str, grounded_width: usize, rng: &mut RngStream) -> Self {
        let g = ParamGroup::Gate;
        let std = 1.0 / (grounded_width as f64).sqrt();
        Self {
            embedding: store.add(format!("{name}.embedding"), &[grounded_width], Init::Normal(std), g, rng),
            mlp: Mlp::new(
                store,
                &format!("{name}.mlp"),
                grounded_width,
                low_rank_width(grounded_width),
                1,
                Init::FanIn,
                g,
                rng,
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelevanceCache {
    frames: usize,
    pooled: Tensor,
    alpha: Vec<f64>,
    mlp: MlpLayerCache,
}

impl RelevanceCache {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Object features averaged over frames, `[objects, width]`.
    pub fn pooled(&self) -> &Tensor {
        &self.pooled
    }
}

/// `r = MLP(sum_k alpha_k p_k)` with `p_k` the frame-mean of object `k` and
/// `alpha = softmax(v . p_k)`. `g` needs at least one object; callers
/// substitute the null grounded feature when a track has none.
pub fn relevance(store: &ParamStore, params: &GateParams, g: &GroundedFeature) -> Result<(f64, RelevanceCache)> {
    let (n, m, d) = g.shape();
    if m == 0 || n == 0 {
        return Err(Error::TensorShape("relevance needs at least one object and frame".into()));
    }
    let v = store.value(params.embedding).data();
    if v.len() != d {
        return Err(Error::GroundedWidth(format!(
            "gate embedding has width {}, grounded tokens {d}",
            v.len()
        )));
    }
    let mut pooled = Tensor::zeros(&[m, d]);
    for j in 0..n {
        for k in 0..m {
            for (p, x) in pooled.row_mut(k).iter_mut().zip(g.row(j, k)) {
                *p += x;
            }
        }
    }
    let pooled = pooled.scale(1.0 / n as f64);
    let logits: Vec<f64> = (0..m).map(|k| dot(v, pooled.row(k))).collect();
    let alpha = softmax(&logits)?;
    let mut mixed = vec![0.0; d];
    for (k, a) in alpha.iter().enumerate() {
        for (s, p) in mixed.iter_mut().zip(pooled.row(k)) {
            *s += a * p;
        }
    }
    let (r, mlp) = params.mlp.forward(store, &Tensor::matrix(1, d, mixed)?)?;
    Ok((
        r.data()[0],
        RelevanceCache {
            frames: n,
            pooled,
            alpha,
            mlp,
        },
    ))
}

/// Backpropagates `dr` into the gate parameters; returns the gradient for
/// the grounded tokens.
pub fn relevance_backward(store: &mut ParamStore, params: &GateParams, cache: &RelevanceCache, dr: f64) -> Tensor {
    let ds = params.mlp.backward(store, &cache.mlp, &Tensor::matrix(1, 1, vec![dr]).expect("scalar"));
    let ds = ds.row(0);
    let m = cache.alpha.len();
    let dalpha: Vec<f64> = (0..m).map(|k| dot(ds, cache.pooled.row(k))).collect();
    let dlogits = softmax_backward(&cache.alpha, &dalpha);
    let v = store.value(params.embedding).data().to_vec();
    let d = v.len();
    let mut dv = vec![0.0; d];
    let mut dpooled = Tensor::zeros(&[m, d]);
    for k in 0..m {
        let p = cache.pooled.row(k);
        for i in 0..d {
            dv[i] += dlogits[k] * p[i];
        }
        for (i, out) in dpooled.row_mut(k).iter_mut().enumerate() {
            *out = cache.alpha[k] * ds[i] + dlogits[k] * v[i];
        }
    }
    store.accumulate_slice(params.embedding, &dv);
    let inv = 1.0 / cache.frames as f64;
    let mut dg = Tensor::zeros(&[cache.frames * m, d]);
    for j in 0..cache.frames {
        for k in 0..m {
            for (o, x) in dg.row_mut(j * m + k).iter_mut().zip(dpooled.row(k)) {
                *o = x * inv;
            }
        }
    }
    dg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateMode {
    Train,
    Infer,
}

/// One gate evaluation with every intermediate kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub layer: usize,
    pub relevance: f64,
    pub noised: f64,
    pub soft: f64,
    pub hard: f64,
    /// Uniform draw selecting the soft gate when `>= 0.5`; zero in infer mode.
    pub mix: f64,
    pub value: f64,
    pub mode: GateMode,
}

impl GateDecision {
    pub fn soft_selected(&self) -> bool {
        self.mode == GateMode::Train && self.mix >= 0.5
    }

    /// `d value / d relevance`: the logistic slope on the soft path, zero on
    /// the hard path.
    pub fn dvalue_drelevance(&self) -> f64 {
        if self.soft_selected() {
            self.soft * (1.0 - self.soft)
        } else {
            0.0
        }
    }

    pub fn skipped(&self) -> bool {
        self.hard == 0.0
    }
}

/// The gate for explicit noise values. In infer mode `epsilon` and `mix`
/// are ignored and the hard gate of the clean relevance is returned.
pub fn gate_from_noise(layer: usize, r: f64, epsilon: f64, mix: f64, mode: GateMode) -> GateDecision {
    let (epsilon, mix) = match mode {
        GateMode::Train => (epsilon, mix),
        GateMode::Infer => (0.0, 0.0),
    };
    let noised = r + epsilon;
    let soft = sigmoid(noised);
    let hard = if noised >= 0.0 { 1.0 } else { 0.0 };
    let value = match mode {
        GateMode::Train if mix >= 0.5 => soft,
        _ => hard,
    };
    GateDecision {
        layer,
        relevance: r,
        noised,
        soft,
        hard,
        mix,
        value,
        mode,
    }
}

/// Per-layer noise streams: layer `i` draws from substream `i` of the
/// epsilon and uniform streams, so draws never depend on evaluation order.
#[derive(Debug, Clone)]
pub struct GateNoise {
    epsilon: Vec<RngStream>,
    uniform: Vec<RngStream>,
}

impl GateNoise {
    pub fn new(seed: u64, layers: usize) -> Self {
        let e = RngStream::new(seed, GATE_EPSILON);
        let u = RngStream::new(seed, GATE_UNIFORM);
        Self {
            epsilon: (0..layers as u64).map(|i| e.substream(i)).collect(),
            uniform: (0..layers as u64).map(|i| u.substream(i)).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.epsilon.len()
    }

    pub fn sample(&mut self, layer: usize, r: f64, mode: GateMode) -> GateDecision {
        sample_gate(layer, r, mode, &mut self.epsilon[layer], &mut self.uniform[layer])
    }
}

/// Draws a gate using the given streams (train mode consumes one value from
/// each; infer mode consumes nothing).
pub fn sample_gate(
    layer: usize,
    r: f64,
    mode: GateMode,
    epsilon_rng: &mut RngStream,
    uniform_rng: &mut RngStream,
) -> GateDecision {
    match mode {
        GateMode::Train => {
            let eps = epsilon_rng.logistic();
            let mix = uniform_rng.uniform();
            gate_from_noise(layer, r, eps, mix, mode)
        }
        GateMode::Infer => gate_from_noise(layer, r, 0.0, 0.0, mode),
    }
}

/// The soft gate `sigmoid(r + epsilon)` as a function of `[r]`.
pub struct SoftGateOp {
    pub epsilon: f64,
}

impl DifferentiableOp for SoftGateOp {
    fn name(&self) -> &str {
        "soft_gate"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let d = gate_from_noise(0, inputs[0].data()[0], self.epsilon, 1.0, GateMode::Train);
        Ok(Tensor::vector(vec![d.value]))
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let d = gate_from_noise(0, inputs[0].data()[0], self.epsilon, 1.0, GateMode::Train);
        Ok(vec![Tensor::vector(vec![dy.data()[0] * d.dvalue_drelevance()])])
    }
}

/// Relevance as a function of the grounded tokens `[g]` for fixed gate
/// parameters.
pub struct RelevanceOp {
    pub store: ParamStore,
    pub params: GateParams,
    pub frames: usize,
}

impl DifferentiableOp for RelevanceOp {
    fn name(&self) -> &str {
        "relevance"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let g = GroundedFeature {
            frames: self.frames,
            objects: inputs[0].rows() / self.frames,
            tokens: inputs[0].clone(),
        };
        Ok(Tensor::vector(vec![relevance(&self.store, &self.params, &g)?.0]))
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let g = GroundedFeature {
            frames: self.frames,
            objects: inputs[0].rows() / self.frames,
            tokens: inputs[0].clone(),
        };
        let (_, cache) = relevance(&self.store, &self.params, &g)?;
        let mut store = self.store.clone();
        Ok(vec![relevance_backward(&mut store, &self.params, &cache, dy.data()[0])])
    }
}
