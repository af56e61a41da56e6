//! Text embedding interface and its deterministic stand-in.

use crate::numerics::rng::RngStream;
use crate::numerics::tensor::norm;
use crate::numerics::Tensor;

/// Maps a phrase to a fixed-width vector. Implementations must be
/// deterministic: the same string always yields the same vector.
pub trait TextEmbedder {
    fn width(&self) -> usize;
    fn embed(&self, phrase: &str) -> Vec<f64>;
}

/// Seeded-hash stub: the phrase selects a ChaCha stream whose Gaussian
/// draws are normalized to a unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashTextEmbedder {
    pub seed: u64,
    pub width: usize,
}

impl HashTextEmbedder {
    pub fn new(seed: u64, width: usize) -> Self {
        Self { seed, width }
    }
}

impl TextEmbedder for HashTextEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn embed(&self, phrase: &str) -> Vec<f64> {
        let mut rng = RngStream::new(self.seed, &format!("text:{phrase}"));
        let mut v = rng.normals(self.width);
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

pub const PAD_TOKEN: &str = "<pad>";

/// Caption as `[max_tokens, width]`: one embedding per lower-cased
/// whitespace-separated word, truncated, then padded with the pad token.
/// The empty caption is all padding and serves as the null prompt.
pub fn encode_prompt(embedder: &dyn TextEmbedder, text: &str, max_tokens: usize) -> Tensor {
    let width = embedder.width();
    let mut data = Vec::with_capacity(max_tokens * width);
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    for i in 0..max_tokens {
        let tok = words.get(i).map(String::as_str).unwrap_or(PAD_TOKEN);
        data.extend(embedder.embed(tok));
    }
    Tensor::matrix(max_tokens, width, data).expect("prompt shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic_unit_norm() {
        let e = HashTextEmbedder::new(9, 16);
        let a = e.embed("a red car");
        assert_eq!(a, e.embed("a red car"));
        assert_ne!(a, e.embed("a blue car"));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prompt_padding() {
        let e = HashTextEmbedder::new(1, 4);
        let p = encode_prompt(&e, "Dog  runs", 3);
        assert_eq!(p.shape(), &[3, 4]);
        assert_eq!(p.row(0), e.embed("dog").as_slice());
        assert_eq!(p.row(2), e.embed(PAD_TOKEN).as_slice());
        let null = encode_prompt(&e, "", 3);
        assert_eq!(null.row(0), null.row(1));
    }
}
