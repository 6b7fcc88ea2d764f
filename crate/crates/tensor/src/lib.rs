//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! Every [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a backward closure together with
//! their parents, so the computation graph is simply the set of tensors
//! reachable from the value that [`Tensor::backward`] is called on.
//!
//! Layout is row-major; image tensors are `NCHW`.
//!
//! The element type is [`Float`]: `f64` by default so finite-difference checks
//! are meaningful, `f32` with the `f32` feature.

mod conv;
mod error;
mod gemm;
pub mod gradcheck;
pub mod init;
mod ops;
pub mod optim;
mod tensor;

pub use conv::{avg_pool2d, conv2d, max_pool2d, ConvSpec, PoolSpec};
pub use error::{Result, TensorError};
pub use ops::{
    add, channel_affine, concat_channels, exp, mean, mul, relu, scale, sigmoid, sum,
    upsample2x, upsample_nearest,
};
pub use tensor::{is_grad_enabled, no_grad, BackwardFn, Tensor};

#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;

/// Number of elements implied by a shape.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
