//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Only the operations the denoiser needs are provided. Each forward op
//! computes its value eagerly and, when the tape records gradients, pushes a
//! [`Backward`] rule that captures what the backward pass needs.

mod adam;
mod batchnorm;
mod conv;
mod gradcheck;
mod ops;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batch_norm_infer, batch_norm_train, BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, reflect_index};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use ops::{
    add, concat_channels, half_sq_norm, leaky_relu, leaky_relu_scalar, mse_loss, scale, sum,
    LEAKY_SLOPE,
};
pub use tape::{Backward, Gradients, Tape, Var};
