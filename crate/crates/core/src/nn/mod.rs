//! A small dense network kernel: MLPs with reverse-mode gradients, losses,
//! an Adam optimizer, finite-difference gradient checks and a checkpoint
//! container. Everything runs in `f64`.

mod checkpoint;
mod dense;
mod gradcheck;
mod loss;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use dense::{
    dot, mlp_backward, mlp_forward, sigmoid, Activation, DenseLayer, DenseParams, LayerNorm,
    Linear, Tape, LAYER_NORM_EPS,
};
pub use gradcheck::{grad_check, grad_check_coords};
pub use loss::{bce_loss, bce_mean, l1_loss};
pub use optim::{adam_step, adam_step_params, Adam, AdamState};
pub(crate) use params::join;
pub use params::{flatten, num_params, scale_in_place, unflatten, zeros_like, Parameters};
