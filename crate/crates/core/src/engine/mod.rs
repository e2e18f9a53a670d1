//! Numerical kernels with hand-written reverse-mode rules.
//!
//! There is no tape: the model composes these kernels explicitly in its
//! forward pass and replays their backward rules in reverse order.

pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod sparse;
pub mod tensor;

pub use dense::{
    affine_backward, affine_forward, dropout_backward, dropout_forward, maxpool_compress_backward,
    maxpool_compress_forward, pool_bin, relu_backward, relu_forward, DropoutMask, PoolRecord, ReluMask,
};
pub use gradcheck::{grad_check, grad_check_extrapolated, relative_error};
pub use loss::softmax_cross_entropy;
pub use sparse::{aggregate_backward, aggregate_forward, sigmoid, EdgeParams};
pub use tensor::{Param, Real, Tensor};
