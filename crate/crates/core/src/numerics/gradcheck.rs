//! Central-difference checks of analytic backward passes.
//!
//! The scalar probed is `L = <w, op(inputs)>` for a fixed pseudo-random `w`,
//! so the upstream gradient handed to `backward` is `w` itself.

use super::blur::gaussian_blur_2d;
use super::ops::{
    fourier_embed, layer_norm, layer_norm_backward, linear, linear_backward, mlp_backward,
    mlp_forward_cached, scaled_dot_attention, scaled_dot_attention_backward, softmax,
    softmax_backward, Activation, AttentionBias, MlpWeights,
};
use super::rng::RngStream;
use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged on absolute error at this scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub trait DifferentiableOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;

    /// Gradients w.r.t. every input, in input order.
    fn backward(&self, _inputs: &[Tensor], _dy: &Tensor) -> Result<Vec<Tensor>> {
        Err(Error::NoBackward(self.name().to_string()))
    }

    fn has_backward(&self) -> bool {
        true
    }
}

fn probe_weights(len: usize) -> Tensor {
    let mut rng = RngStream::new(0x5eed, "grad-check");
    Tensor::vector((0..len).map(|_| rng.uniform() * 2.0 - 1.0).collect())
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Max relative error between analytic and central-difference gradients over
/// every entry of every input.
pub fn grad_check(op: &dyn DifferentiableOp, inputs: &[Tensor], h: f64) -> Result<f64> {
    if !op.has_backward() {
        return Err(Error::NoBackward(op.name().to_string()));
    }
    let y = op.forward(inputs)?;
    let w = probe_weights(y.len());
    let dy = Tensor::new(y.shape().to_vec(), w.data().to_vec())?;
    let analytic = op.backward(inputs, &dy)?;
    let probe = |xs: &[Tensor]| -> Result<f64> { Ok(dot(op.forward(xs)?.data(), w.data())) };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = probe(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = probe(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// [`grad_check`] on a built-in kernel operation looked up by name.
pub fn grad_check_named(op_name: &str, inputs: &[Tensor], h: f64) -> Result<f64> {
    let op = kernel_op(op_name).ok_or_else(|| Error::NoBackward(op_name.to_string()))?;
    grad_check(op.as_ref(), inputs, h)
}

/// Built-in kernel operations by name: `softmax`, `attention`,
/// `attention_bias`, `linear`, `mlp`, `layer_norm`, plus the forward-only
/// `fourier_embed` and `gaussian_blur_2d`.
pub fn kernel_op(name: &str) -> Option<Box<dyn DifferentiableOp>> {
    let op: Box<dyn DifferentiableOp> = match name {
        "softmax" => Box::new(SoftmaxOp),
        "attention" => Box::new(AttentionOp { with_bias: false }),
        "attention_bias" => Box::new(AttentionOp { with_bias: true }),
        "linear" => Box::new(LinearOp),
        "mlp" => Box::new(MlpOp),
        "layer_norm" => Box::new(LayerNormOp),
        "fourier_embed" => Box::new(ForwardOnly("fourier_embed")),
        "gaussian_blur_2d" => Box::new(ForwardOnly("gaussian_blur_2d")),
        _ => return None,
    };
    Some(op)
}

struct SoftmaxOp;

impl DifferentiableOp for SoftmaxOp {
    fn name(&self) -> &str {
        "softmax"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        Ok(Tensor::vector(softmax(inputs[0].data())?))
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let y = softmax(inputs[0].data())?;
        Ok(vec![Tensor::new(
            inputs[0].shape().to_vec(),
            softmax_backward(&y, dy.data()),
        )?])
    }
}

/// Inputs `[q, k, v]` or `[q, k, v, per_key_bias]`.
struct AttentionOp {
    with_bias: bool,
}

impl DifferentiableOp for AttentionOp {
    fn name(&self) -> &str {
        if self.with_bias {
            "attention_bias"
        } else {
            "attention"
        }
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let bias = if self.with_bias {
            AttentionBias::PerKey(inputs[3].data())
        } else {
            AttentionBias::None
        };
        Ok(scaled_dot_attention(&inputs[0], &inputs[1], &inputs[2], bias)?.output)
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let bias = if self.with_bias {
            AttentionBias::PerKey(inputs[3].data())
        } else {
            AttentionBias::None
        };
        let out = scaled_dot_attention(&inputs[0], &inputs[1], &inputs[2], bias)?;
        let g = scaled_dot_attention_backward(&inputs[0], &inputs[1], &inputs[2], &out.probs, dy);
        let mut grads = vec![g.dq.clone(), g.dk.clone(), g.dv.clone()];
        if self.with_bias {
            grads.push(Tensor::vector(g.dbias_per_key()));
        }
        Ok(grads)
    }
}

/// Inputs `[x, w, b]`.
struct LinearOp;

impl DifferentiableOp for LinearOp {
    fn name(&self) -> &str {
        "linear"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        linear(&inputs[0], &inputs[1], inputs[2].data())
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let (dx, dw, db) = linear_backward(&inputs[0], &inputs[1], dy);
        Ok(vec![dx, dw, Tensor::vector(db)])
    }
}

/// Inputs `[x, w1, b1, w2, b2]`, GELU between the layers.
struct MlpOp;

fn mlp_weights(inputs: &[Tensor]) -> MlpWeights {
    MlpWeights {
        w1: inputs[1].clone(),
        b1: inputs[2].data().to_vec(),
        w2: inputs[3].clone(),
        b2: inputs[4].data().to_vec(),
    }
}

impl DifferentiableOp for MlpOp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        Ok(mlp_forward_cached(&inputs[0], &mlp_weights(inputs), Activation::Gelu)?.0)
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let w = mlp_weights(inputs);
        let (_, cache) = mlp_forward_cached(&inputs[0], &w, Activation::Gelu)?;
        let g = mlp_backward(&cache, &w, Activation::Gelu, dy);
        Ok(vec![
            g.dx,
            g.dw1,
            Tensor::vector(g.db1),
            g.dw2,
            Tensor::vector(g.db2),
        ])
    }
}

/// Inputs `[x, scale, shift]`.
struct LayerNormOp;

impl DifferentiableOp for LayerNormOp {
    fn name(&self) -> &str {
        "layer_norm"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        Ok(layer_norm(&inputs[0], inputs[1].data(), inputs[2].data())?.0)
    }

    fn backward(&self, inputs: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        let (_, cache) = layer_norm(&inputs[0], inputs[1].data(), inputs[2].data())?;
        let (dx, ds, db) = layer_norm_backward(&cache, inputs[1].data(), dy);
        Ok(vec![dx, Tensor::vector(ds), Tensor::vector(db)])
    }
}

/// Kernel ops without an analytic backward pass.
struct ForwardOnly(&'static str);

impl DifferentiableOp for ForwardOnly {
    fn name(&self) -> &str {
        self.0
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        match self.0 {
            "fourier_embed" => Ok(Tensor::vector(fourier_embed(inputs[0].data(), 4))),
            _ => {
                let x = &inputs[0];
                let (h, w) = (x.rows(), x.cols());
                Tensor::new(vec![h, w], gaussian_blur_2d(x.data(), w, h, 1.0, 2)?)
            }
        }
    }

    fn has_backward(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn softmax_gradient() {
        let mut rng = RngStream::new(11, "test");
        let x = random(&[6], &mut rng);
        assert!(grad_check_named("softmax", &[x], DEFAULT_STEP).unwrap() < 1e-4);
    }

    #[test]
    fn attention_gradient() {
        let mut rng = RngStream::new(12, "test");
        let inputs = vec![
            random(&[3, 4], &mut rng),
            random(&[3, 4], &mut rng),
            random(&[3, 4], &mut rng),
        ];
        assert!(grad_check_named("attention", &inputs, DEFAULT_STEP).unwrap() < 1e-4);
    }

    #[test]
    fn linear_gradient_is_exact() {
        let mut rng = RngStream::new(13, "test");
        let inputs = vec![random(&[4, 3], &mut rng), random(&[3, 5], &mut rng), random(&[5], &mut rng)];
        assert!(grad_check_named("linear", &inputs, DEFAULT_STEP).unwrap() < 1e-8);
    }

    #[test]
    fn forward_only_ops_report_no_backward() {
        let x = Tensor::vector(vec![0.2, 0.4]);
        let err = grad_check_named("fourier_embed", &[x.clone()], DEFAULT_STEP).unwrap_err();
        assert_eq!(err.code(), "no-backward");
        assert_eq!(grad_check_named("nope", &[x], DEFAULT_STEP).unwrap_err().code(), "no-backward");
    }
}
