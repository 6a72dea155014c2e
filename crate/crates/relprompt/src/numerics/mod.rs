//! Scalar-generic math kernels: matrices, RNG, activations, Adam, and
//! finite-difference gradient checking.

mod adam;
mod functions;
mod gradcheck;
mod matrix;
mod rng;
mod scalar;

pub use adam::{adam_step, AdamState};
pub use functions::{argmax, gelu, gelu_grad, log_softmax, log_softmax_in_place, softmax_in_place};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckTarget, TensorCheck};
pub use matrix::Matrix;
pub use rng::{derive_seed, Pcg32};
pub use scalar::Scalar;
