//! Parameterized layers over a [`ParamStore`].
//!
//! Layers hold parameter handles only. `forward` reads the store and returns
//! a cache; `backward` consumes that cache, accumulates parameter gradients
//! into the store and returns the input gradient.

use super::ops::{
    layer_norm, layer_norm_backward, linear, linear_backward, scaled_dot_attention,
    scaled_dot_attention_backward, Activation, AttentionBias, LayerNormCache,
};
use super::params::{Init, ParamGroup, ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        group: ParamGroup,
        rng: &mut RngStream,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), &[input, output], init, group, rng);
        let b = store.add(format!("{name}.bias"), &[output], Init::Zeros, group, rng);
        Self { w, b }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        linear(x, store.value(self.w), store.value(self.b).data())
    }

    /// `x` is the input seen by the forward pass.
    pub fn backward(&self, store: &mut ParamStore, x: &Tensor, dy: &Tensor) -> Tensor {
        let (dx, dw, db) = linear_backward(x, store.value(self.w), dy);
        store.accumulate(self.w, &dw);
        store.accumulate_slice(self.b, &db);
        dx
    }

    pub fn input_width(&self, store: &ParamStore) -> usize {
        store.value(self.w).rows()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        group: ParamGroup,
        rng: &mut RngStream,
    ) -> Self {
        let scale = store.add(format!("{name}.scale"), &[width], Init::Ones, group, rng);
        let shift = store.add(format!("{name}.shift"), &[width], Init::Zeros, group, rng);
        Self { scale, shift }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        layer_norm(x, store.value(self.scale).data(), store.value(self.shift).data())
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let (dx, dscale, dshift) = layer_norm_backward(cache, store.value(self.scale).data(), dy);
        store.accumulate_slice(self.scale, &dscale);
        store.accumulate_slice(self.shift, &dshift);
        dx
    }
}

/// Two affine layers with an activation between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpLayerCache {
    x: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        output_init: Init,
        group: ParamGroup,
        rng: &mut RngStream,
    ) -> Self {
        let first = Linear::new(store, &format!("{name}.fc1"), input, hidden, Init::FanIn, group, rng);
        let second = Linear::new(store, &format!("{name}.fc2"), hidden, output, output_init, group, rng);
        Self {
            first,
            second,
            activation: Activation::Gelu,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, MlpLayerCache)> {
        let pre = self.first.forward(store, x)?;
        let act = self.activation;
        let hidden = Tensor::new(
            pre.shape().to_vec(),
            pre.data().iter().map(|&v| act.apply(v)).collect(),
        )?;
        let y = self.second.forward(store, &hidden)?;
        Ok((
            y,
            MlpLayerCache {
                x: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &MlpLayerCache, dy: &Tensor) -> Tensor {
        let mut dpre = self.second.backward(store, &cache.hidden, dy);
        for (g, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= self.activation.derivative(p);
        }
        self.first.backward(store, &cache.x, &dpre)
    }
}

/// One independent attention problem inside a batched call: which rows of
/// the query matrix attend to which rows of the key/value matrix.
#[derive(Debug, Clone)]
pub struct AttentionGroup {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
    /// Key-broadcast logit bias, one entry per key of this group.
    pub bias: Option<Vec<f64>>,
}

/// Single-head attention with learned Q/K/V/output projections, evaluated
/// over many independent groups of rows in one call.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Tensor,
    xkv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mixed: Tensor,
    groups: Vec<AttentionGroup>,
    probs: Vec<Tensor>,
}

impl AttentionCache {
    /// Attention weights of group `g`, `[queries, keys]`.
    pub fn probs(&self, g: usize) -> &Tensor {
        &self.probs[g]
    }
}

impl Attention {
    /// `zero_output` zero-initializes the output projection so the layer
    /// starts as an exact zero map.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_width: usize,
        key_width: usize,
        inner: usize,
        output: usize,
        zero_output: bool,
        group: ParamGroup,
        rng: &mut RngStream,
    ) -> Self {
        let out_init = if zero_output { Init::Zeros } else { Init::FanIn };
        Self {
            q: Linear::new(store, &format!("{name}.to_q"), query_width, inner, Init::FanIn, group, rng),
            k: Linear::new(store, &format!("{name}.to_k"), key_width, inner, Init::FanIn, group, rng),
            v: Linear::new(store, &format!("{name}.to_v"), key_width, inner, Init::FanIn, group, rng),
            o: Linear::new(store, &format!("{name}.to_out"), inner, output, out_init, group, rng),
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        xq: &Tensor,
        xkv: &Tensor,
        groups: Vec<AttentionGroup>,
    ) -> Result<(Tensor, AttentionCache)> {
        let q = self.q.forward(store, xq)?;
        let k = self.k.forward(store, xkv)?;
        let v = self.v.forward(store, xkv)?;
        let mut mixed = Tensor::zeros(&[q.rows(), v.cols()]);
        let mut probs = Vec::with_capacity(groups.len());
        for g in &groups {
            let (gq, gk, gv) = (q.gather_rows(&g.queries), k.gather_rows(&g.keys), v.gather_rows(&g.keys));
            let bias = match &g.bias {
                Some(b) => AttentionBias::PerKey(b),
                None => AttentionBias::None,
            };
            let out = scaled_dot_attention(&gq, &gk, &gv, bias)?;
            mixed.scatter_add_rows(&g.queries, &out.output);
            probs.push(out.probs);
        }
        let y = self.o.forward(store, &mixed)?;
        Ok((
            y,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                mixed,
                groups,
                probs,
            },
        ))
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward(&self, store: &mut ParamStore, cache: &AttentionCache, dy: &Tensor) -> (Tensor, Tensor) {
        let dmixed = self.o.backward(store, &cache.mixed, dy);
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for (g, p) in cache.groups.iter().zip(&cache.probs) {
            let gq = cache.q.gather_rows(&g.queries);
            let gk = cache.k.gather_rows(&g.keys);
            let gv = cache.v.gather_rows(&g.keys);
            let dout = dmixed.gather_rows(&g.queries);
            let grads = scaled_dot_attention_backward(&gq, &gk, &gv, p, &dout);
            dq.scatter_add_rows(&g.queries, &grads.dq);
            dk.scatter_add_rows(&g.keys, &grads.dk);
            dv.scatter_add_rows(&g.keys, &grads.dv);
        }
        let dxq = self.q.backward(store, &cache.xq, &dq);
        let mut dxkv = self.k.backward(store, &cache.xkv, &dk);
        dxkv.add_assign(&self.v.backward(store, &cache.xkv, &dv));
        (dxq, dxkv)
    }
}

/// Consecutive blocks of `block` rows: `[0, block)`, `[block, 2 block)`, ...
pub fn contiguous_groups(count: usize, block: usize) -> Vec<Vec<usize>> {
    (0..count).map(|i| (i * block..(i + 1) * block).collect()).collect()
}

/// Rows sharing a position across `count` blocks of `block` rows:
/// `{p, p + block, p + 2 block, ...}` for each `p < block`.
pub fn strided_groups(count: usize, block: usize) -> Vec<Vec<usize>> {
    (0..block).map(|p| (0..count).map(|n| n * block + p).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_attention_is_zero() {
        let mut rng = RngStream::new(3, "init");
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", 4, 4, 4, 4, true, ParamGroup::Temporal, &mut rng);
        let x = Tensor::from_fn(&[6, 4], |i| (i as f64).sin());
        let groups = strided_groups(3, 2)
            .into_iter()
            .map(|rows| AttentionGroup {
                queries: rows.clone(),
                keys: rows,
                bias: None,
            })
            .collect();
        let (y, _) = att.forward(&store, &x, &x, groups).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn group_helpers() {
        assert_eq!(contiguous_groups(2, 3), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(strided_groups(2, 3), vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
    }
}
