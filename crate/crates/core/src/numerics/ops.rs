//! Differentiable kernel operations and their vector-Jacobian products.
//!
//! Each forward has a matching `*_backward` taking the upstream gradient and
//! whatever the forward cached. Nothing here records a tape; composite layers
//! chain these calls by hand.

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptySoftmax);
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `dx_i = y_i (dy_i - <y, dy>)`
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(yi, di)| yi * (di - inner)).collect()
}

/// Additive logit bias for [`scaled_dot_attention`].
#[derive(Debug, Clone, Copy)]
pub enum AttentionBias<'a> {
    None,
    /// One value per key, broadcast over every query row.
    PerKey(&'a [f64]),
    /// A full `[queries, keys]` matrix.
    Full(&'a Tensor),
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Tensor,
    /// Row-stochastic `[queries, keys]` attention weights.
    pub probs: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
    /// Gradient w.r.t. the pre-softmax logits, which is also the gradient
    /// w.r.t. a full bias matrix.
    pub dlogits: Tensor,
}

impl AttentionGrads {
    /// Gradient w.r.t. a key-broadcast bias.
    pub fn dbias_per_key(&self) -> Vec<f64> {
        self.dlogits.col_sums()
    }
}

/// `softmax(Q K^T / sqrt(d) + bias) V`
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: AttentionBias<'_>,
) -> Result<AttentionOutput> {
    let d = q.cols();
    if k.cols() != d {
        return Err(Error::AttentionShape(format!(
            "query width {d} vs key width {}",
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::AttentionShape(format!(
            "{} keys vs {} values",
            k.rows(),
            v.rows()
        )));
    }
    if k.rows() == 0 {
        return Err(Error::AttentionShape("no keys".into()));
    }
    let (nq, nk) = (q.rows(), k.rows());
    match bias {
        AttentionBias::PerKey(b) if b.len() != nk => {
            return Err(Error::AttentionShape(format!(
                "per-key bias has {} entries for {nk} keys",
                b.len()
            )))
        }
        AttentionBias::Full(b) if b.rows() != nq || b.cols() != nk => {
            return Err(Error::AttentionShape(format!(
                "bias shape {:?} vs logits {nq}x{nk}",
                b.shape()
            )))
        }
        _ => {}
    }
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut logits = q.matmul_t(k);
    for i in 0..nq {
        let row = logits.row_mut(i);
        for (j, l) in row.iter_mut().enumerate() {
            *l *= inv_sqrt_d;
            match bias {
                AttentionBias::None => {}
                AttentionBias::PerKey(b) => *l += b[j],
                AttentionBias::Full(b) => *l += b.data()[i * nk + j],
            }
        }
        softmax_in_place(row);
    }
    let output = logits.matmul(v);
    Ok(AttentionOutput {
        output,
        probs: logits,
    })
}

pub fn scaled_dot_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &Tensor,
    dout: &Tensor,
) -> AttentionGrads {
    let inv_sqrt_d = 1.0 / (q.cols() as f64).sqrt();
    let dv = probs.t_matmul(dout);
    let dp = dout.matmul_t(v);
    let mut dlogits = Tensor::zeros(probs.shape());
    for i in 0..probs.rows() {
        let g = softmax_backward(probs.row(i), dp.row(i));
        dlogits.row_mut(i).copy_from_slice(&g);
    }
    let ds = dlogits.scale(inv_sqrt_d);
    let dq = ds.matmul(k);
    let dk = ds.t_matmul(q);
    AttentionGrads {
        dq,
        dk,
        dv,
        dlogits,
    }
}

/// `y = x W + b` with `W: [in, out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::MlpShape(format!(
            "input width {} vs weight {:?} / bias {}",
            x.cols(),
            w.shape(),
            b.len()
        )));
    }
    let mut y = x.matmul(w);
    let c = y.cols();
    for row in y.data_mut().chunks_mut(c.max(1)) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    (dy.matmul_t(w), x.t_matmul(dy), dy.col_sums())
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization over the feature axis, then `xhat * scale + shift`.
pub fn layer_norm(x: &Tensor, scale: &[f64], shift: &[f64]) -> Result<(Tensor, LayerNormCache)> {
    let c = x.cols();
    if c == 0 {
        return Err(Error::NormShape);
    }
    if scale.len() != c || shift.len() != c {
        return Err(Error::MlpShape(format!(
            "layer norm affine width {}/{} vs features {c}",
            scale.len(),
            shift.len()
        )));
    }
    let rows = x.rows();
    let mut xhat = Tensor::zeros(&[rows, c]);
    let mut y = Tensor::zeros(&[rows, c]);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let xh = xhat.row(r).to_vec();
        for (j, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = xh[j] * scale[j] + shift[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dscale, dshift)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    scale: &[f64],
    dy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c = dy.cols();
    let n = c as f64;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for r in 0..dy.rows() {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut dxh = vec![0.0; c];
        for j in 0..c {
            dscale[j] += g[j] * xh[j];
            dshift[j] += g[j];
            dxh[j] = g[j] * scale[j];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / n;
        let mean_dxh_xh = dot(&dxh, xh) / n;
        let is = cache.inv_std[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    (dx, dscale, dshift)
}

/// Nonlinearity between the two affine layers of an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// Tanh approximation of the Gaussian error linear unit.
    #[default]
    Gelu,
    /// Test hook: no nonlinearity.
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Two affine layers: `[in, hidden]` then `[hidden, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Tensor,
    pub b2: Vec<f64>,
}

impl MlpWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.cols()
            && self.w2.rows() == self.w1.cols()
            && self.b2.len() == self.w2.cols();
        if ok {
            Ok(())
        } else {
            Err(Error::MlpShape(format!(
                "inconsistent layers {:?}/{} then {:?}/{}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )))
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub x: Tensor,
    pub pre: Tensor,
    pub hidden: Tensor,
}

pub fn mlp_forward(x: &Tensor, weights: &MlpWeights, act: Activation) -> Result<Tensor> {
    mlp_forward_cached(x, weights, act).map(|(y, _)| y)
}

pub fn mlp_forward_cached(
    x: &Tensor,
    weights: &MlpWeights,
    act: Activation,
) -> Result<(Tensor, MlpCache)> {
    weights.validate()?;
    if x.cols() != weights.input_width() {
        return Err(Error::MlpShape(format!(
            "input width {} vs expected {}",
            x.cols(),
            weights.input_width()
        )));
    }
    let pre = linear(x, &weights.w1, &weights.b1)?;
    let hidden = Tensor::new(
        pre.shape().to_vec(),
        pre.data().iter().map(|&v| act.apply(v)).collect(),
    )?;
    let y = linear(&hidden, &weights.w2, &weights.b2)?;
    Ok((
        y,
        MlpCache {
            x: x.clone(),
            pre,
            hidden,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dx: Tensor,
    pub dw1: Tensor,
    pub db1: Vec<f64>,
    pub dw2: Tensor,
    pub db2: Vec<f64>,
}

pub fn mlp_backward(cache: &MlpCache, weights: &MlpWeights, act: Activation, dy: &Tensor) -> MlpGrads {
    let (dh, dw2, db2) = linear_backward(&cache.hidden, &weights.w2, dy);
    let mut dpre = dh;
    for (g, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
        *g *= act.derivative(p);
    }
    let (dx, dw1, db1) = linear_backward(&cache.x, &weights.w1, &dpre);
    MlpGrads {
        dx,
        dw1,
        db1,
        dw2,
        db2,
    }
}

/// `[sin(2^k pi c) for c in coords, cos(2^k pi c) for c in coords]` for each
/// `k in 0..num_freqs`, concatenated in order of increasing `k`.
pub fn fourier_embed(coords: &[f64], num_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * num_freqs * coords.len());
    for k in 0..num_freqs {
        let f = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(coords.iter().map(|c| (f * c).sin()));
        out.extend(coords.iter().map(|c| (f * c).cos()));
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
