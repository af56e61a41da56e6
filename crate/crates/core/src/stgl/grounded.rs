//! Grounded tokens: per-object, per-frame features fusing a phrase embedding
//! with Fourier-encoded coordinates, then smoothed across frames.

use super::embedder::TextEmbedder;
use crate::error::{Error, Result};
use crate::grounding::GroundingTrack;
use crate::numerics::layers::{strided_groups, AttentionCache, AttentionGroup, MlpLayerCache};
use crate::numerics::ops::LayerNormCache;
use crate::numerics::{
    fourier_embed, Attention, Init, LayerNorm, Mlp, ParamGroup, ParamId, ParamStore, RngStream, Tensor,
};

/// Grounded tokens of a clip. Row `n * objects + m` holds object `m` at
/// frame `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedFeature {
    pub frames: usize,
    pub objects: usize,
    pub tokens: Tensor,
}

impl GroundedFeature {
    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// `(frames, objects, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.objects, self.width())
    }

    pub fn row(&self, frame: usize, object: usize) -> &[f64] {
        self.tokens.row(frame * self.objects + object)
    }

    /// Rows of frame `n`, `[objects, width]`.
    pub fn frame(&self, n: usize) -> Tensor {
        self.tokens.slice_rows(n * self.objects, (n + 1) * self.objects)
    }
}

/// `MLP([text, fourier(coords)])` with learnable null embeddings standing in
/// for missing phrases and missing conditions.
#[derive(Debug, Clone)]
pub struct GroundedEncoder {
    pub mlp: Mlp,
    pub null_text: ParamId,
    pub null_coord: ParamId,
    pub text_width: usize,
    pub num_freqs: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    mlp: MlpLayerCache,
    null_text_rows: Vec<usize>,
    null_coord_rows: Vec<usize>,
}

impl GroundedEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        text_width: usize,
        num_freqs: usize,
        width: usize,
        rng: &mut RngStream,
    ) -> Self {
        let coord_width = 8 * num_freqs;
        let g = ParamGroup::Grounding;
        let null_text = store.add(format!("{name}.null_text"), &[text_width], Init::Normal(0.02), g, rng);
        let null_coord = store.add(format!("{name}.null_coord"), &[coord_width], Init::Normal(0.02), g, rng);
        let mlp = Mlp::new(
            store,
            &format!("{name}.mlp"),
            text_width + coord_width,
            2 * width,
            width,
            Init::FanIn,
            g,
            rng,
        );
        Self {
            mlp,
            null_text,
            null_coord,
            text_width,
            num_freqs,
            width,
        }
    }

    pub fn coord_width(&self) -> usize {
        8 * self.num_freqs
    }

    pub fn encode(
        &self,
        store: &ParamStore,
        track: &GroundingTrack,
        embedder: &dyn TextEmbedder,
    ) -> Result<(GroundedFeature, EncoderCache)> {
        if embedder.width() != self.text_width {
            return Err(Error::GroundedWidth(format!(
                "embedder width {} but the encoder expects {}",
                embedder.width(),
                self.text_width
            )));
        }
        let (n, m) = (track.num_frames, track.num_objects());
        let in_width = self.text_width + self.coord_width();
        let mut input = Vec::with_capacity(n * m * in_width);
        let mut null_text_rows = Vec::new();
        let mut null_coord_rows = Vec::new();
        let phrase_embeddings: Vec<Option<Vec<f64>>> = track
            .objects
            .iter()
            .map(|o| (!o.phrase.trim().is_empty()).then(|| embedder.embed(&o.phrase)))
            .collect();
        for j in 0..n {
            for (k, obj) in track.objects.iter().enumerate() {
                let row = j * m + k;
                let cond = obj.conditions[j].as_ref().filter(|c| c.is_present());
                match (cond, &phrase_embeddings[k]) {
                    (Some(_), Some(text)) => input.extend_from_slice(text),
                    _ => {
                        input.extend_from_slice(store.value(self.null_text).data());
                        null_text_rows.push(row);
                    }
                }
                match cond {
                    Some(c) => input.extend(fourier_embed(&c.embedding_coords(), self.num_freqs)),
                    None => {
                        input.extend_from_slice(store.value(self.null_coord).data());
                        null_coord_rows.push(row);
                    }
                }
            }
        }
        let x = Tensor::matrix(n * m, in_width, input)?;
        let (tokens, mlp) = self.mlp.forward(store, &x)?;
        Ok((
            GroundedFeature {
                frames: n,
                objects: m,
                tokens,
            },
            EncoderCache {
                mlp,
                null_text_rows,
                null_coord_rows,
            },
        ))
    }

    /// Backpropagates into the MLP and the null embeddings.
    pub fn backward(&self, store: &mut ParamStore, cache: &EncoderCache, dg: &Tensor) {
        let dx = self.mlp.backward(store, &cache.mlp, dg);
        let tw = self.text_width;
        for &r in &cache.null_text_rows {
            store.accumulate_slice(self.null_text, &dx.row(r)[..tw]);
        }
        for &r in &cache.null_coord_rows {
            store.accumulate_slice(self.null_coord, &dx.row(r)[tw..]);
        }
    }
}

/// Residual attention across frames, independently for each object.
#[derive(Debug, Clone)]
pub struct GroundedTemporal {
    pub norm: LayerNorm,
    pub attn: Attention,
}

#[derive(Debug, Clone)]
pub struct GroundedTemporalCache {
    norm: LayerNormCache,
    attn: Option<AttentionCache>,
}

impl GroundedTemporal {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut RngStream) -> Self {
        let g = ParamGroup::Grounding;
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), width, g, rng),
            attn: Attention::new(store, &format!("{name}.attn"), width, width, width, width, true, g, rng),
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        g: &GroundedFeature,
    ) -> Result<(GroundedFeature, GroundedTemporalCache)> {
        let (normed, norm) = self.norm.forward(store, &g.tokens)?;
        if g.objects == 0 {
            return Ok((g.clone(), GroundedTemporalCache { norm, attn: None }));
        }
        let groups = strided_groups(g.frames, g.objects)
            .into_iter()
            .map(|rows| AttentionGroup {
                queries: rows.clone(),
                keys: rows,
                bias: None,
            })
            .collect();
        let (mut out, cache) = self.attn.forward(store, &normed, &normed, groups)?;
        out.add_assign(&g.tokens);
        Ok((
            GroundedFeature {
                frames: g.frames,
                objects: g.objects,
                tokens: out,
            },
            GroundedTemporalCache {
                norm,
                attn: Some(cache),
            },
        ))
    }

    /// Gradient with respect to the input tokens.
    pub fn backward(&self, store: &mut ParamStore, cache: &GroundedTemporalCache, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        if let Some(attn) = &cache.attn {
            let (dq, dkv) = self.attn.backward(store, attn, dy);
            let dn = dq.add(&dkv);
            dx.add_assign(&self.norm.backward(store, &cache.norm, &dn));
        }
        dx
    }
}

/// Convenience wrapper: smooth `g` across frames with `layer`.
pub fn temporal_attend_grounded(
    layer: &GroundedTemporal,
    store: &ParamStore,
    g: &GroundedFeature,
) -> Result<GroundedFeature> {
    Ok(layer.forward(store, g)?.0)
}

/// Convenience wrapper around [`GroundedEncoder::encode`].
pub fn encode_grounded_features(
    encoder: &GroundedEncoder,
    store: &ParamStore,
    track: &GroundingTrack,
    embedder: &dyn TextEmbedder,
) -> Result<GroundedFeature> {
    Ok(encoder.encode(store, track, embedder)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{BoundingBox, Condition, TrackObject};
    use crate::stgl::embedder::HashTextEmbedder;

    fn setup(d_g: usize) -> (ParamStore, GroundedEncoder, GroundedTemporal, HashTextEmbedder) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(5, "init");
        let enc = GroundedEncoder::new(&mut store, "ground", 16, 4, d_g, &mut rng);
        let temp = GroundedTemporal::new(&mut store, "ground_temporal", d_g, &mut rng);
        (store, enc, temp, HashTextEmbedder::new(2, 16))
    }

    fn bx(x: f64) -> Option<Condition> {
        Some(Condition::Box(BoundingBox::new(x, 0.1, x + 0.3, 0.5).unwrap()))
    }

    fn track(n: usize) -> GroundingTrack {
        let objects = vec![
            TrackObject {
                phrase: "a dog".into(),
                conditions: (0..n).map(|j| bx(0.02 * (j % 4) as f64)).collect(),
            },
            TrackObject {
                phrase: "a ball".into(),
                conditions: vec![None; n],
            },
        ];
        GroundingTrack::new(n, objects).unwrap()
    }

    #[test]
    fn encoder_shapes_and_null_path() {
        let (store, enc, _, emb) = setup(64);
        let t = track(16);
        let g = encode_grounded_features(&enc, &store, &t, &emb).unwrap();
        assert_eq!(g.shape(), (16, 2, 64));
        // Frames 0 and 4 carry the same box for object 0.
        assert_eq!(g.row(0, 0), g.row(4, 0));

        let null_in = Tensor::hcat(
            &Tensor::matrix(1, 16, store.value(enc.null_text).data().to_vec()).unwrap(),
            &Tensor::matrix(1, 32, store.value(enc.null_coord).data().to_vec()).unwrap(),
        );
        let (expected, _) = enc.mlp.forward(&store, &null_in).unwrap();
        for j in 0..16 {
            assert_eq!(g.row(j, 1), expected.row(0));
        }
    }

    #[test]
    fn width_mismatch_is_named() {
        let (store, enc, _, _) = setup(8);
        let err = enc.encode(&store, &track(2), &HashTextEmbedder::new(2, 12)).unwrap_err();
        assert_eq!(err.code(), "grounded-width");
    }

    #[test]
    fn temporal_identity_cases() {
        let (mut store, enc, temp, emb) = setup(8);
        let g = encode_grounded_features(&enc, &store, &track(6), &emb).unwrap();
        assert_eq!(temporal_attend_grounded(&temp, &store, &g).unwrap(), g);
        let single = encode_grounded_features(&enc, &store, &track(1), &emb).unwrap();
        assert_eq!(temporal_attend_grounded(&temp, &store, &single).unwrap(), single);

        // Any output projection: identical frames per object stay identical.
        let mut rng = RngStream::new(11, "perturb");
        let out_w = temp.attn.o.w;
        let shape = store.value(out_w).shape().to_vec();
        *store.value_mut(out_w) = Tensor::new(shape.clone(), rng.normals(shape.iter().product())).unwrap();
        let constant = GroundingTrack::new(
            5,
            vec![TrackObject {
                phrase: "cat".into(),
                conditions: vec![bx(0.3); 5],
            }],
        )
        .unwrap();
        let gc = encode_grounded_features(&enc, &store, &constant, &emb).unwrap();
        let out = temporal_attend_grounded(&temp, &store, &gc).unwrap();
        for j in 1..5 {
            assert_eq!(out.row(j, 0), out.row(0, 0));
        }
    }
}
