//! Minimal differentiable tensor kernel shared by every other module.

pub mod blur;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use blur::gaussian_blur_2d;
pub use gradcheck::{grad_check, grad_check_named, DifferentiableOp};
pub use layers::{Attention, AttentionGroup, LayerNorm, Linear, Mlp};
pub use ops::{
    fourier_embed, layer_norm, mlp_forward, scaled_dot_attention, sigmoid, softmax, Activation,
    AttentionBias,
};
pub use params::{Init, ParamGroup, ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub use tensor::Tensor;
