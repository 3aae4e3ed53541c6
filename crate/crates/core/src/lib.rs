//! Closed-form reconstruction of a convolutional network's training input
//! from the gradients of a single training step.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, images and the
//! command line live in the `gradleak` companion crate.
//!
//! Pipeline, from the output layer back to the input:
//!
//! 1. the dense layer's input is read off its weight and bias gradients
//!    ([`attack::recover_fc_input`]);
//! 2. the loss gradient w.r.t. that input is formed from the bias gradients
//!    and the dense weights ([`attack::fc_input_gradient`]);
//! 3. for every conv block, the gradient is pushed through the activation
//!    using only the activation's output, and the block input is solved from
//!    the stacked weight/gradient constraint system ([`attack::solve_layer_input`]).
//!
//! [`audit`] counts the same constraints without any data and predicts which
//! layers leak.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activation;
pub mod attack;
pub mod audit;
mod error;
pub mod linalg;
pub mod model;
pub mod tensor;
pub mod victim;

pub use activation::Activation;
pub use error::{Error, Result};
pub use model::{ArchitectureSpec, GradientBundle, LayerParams, LayerSpec, ParameterSet};
pub use tensor::{ConvGeometry, Tensor};
