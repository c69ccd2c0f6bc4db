//! Deterministic numerical primitives shared by every model module.

mod activation;
mod gradcheck;
mod layout;
pub(crate) mod matrix;
mod rng;
pub(crate) mod softmax;

pub use activation::{activation, activation_grad, relu, sigmoid, tanh, Activation};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_ABS_FLOOR};
pub use layout::{Layout, SlotId};
pub use matrix::{outer_acc, MatRef, Matrix};
pub use rng::{derive_seed, RngState};
pub use softmax::masked_softmax;
