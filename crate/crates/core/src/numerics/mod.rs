//! Dense linear algebra and the small amount of neural-network machinery the
//! adapters need: softmax, the bias-free two-layer head with exact gradients,
//! Adam, and a finite-difference checker.

mod adam;
pub mod gradcheck;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{argmax, softmax, Matrix, Scalar};
pub(crate) use mlp::check_labels;
pub use mlp::{
    ce_loss_and_grads, ce_loss_and_grads_with, mlp_forward, mlp_forward_with, softmax_cross_entropy, uniform_fan_in,
    Activation, HiddenCache, MlpParams,
};
