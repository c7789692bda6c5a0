//! Audio preprocessing layers for neural-network pipelines.
//!
//! Time-frequency conversion is expressed as convolution with DFT kernel
//! banks so the kernels (and the mel filterbank that follows) can be treated
//! as trainable parameters; [`gradients`] supplies their backward passes.

pub mod audio_io;
pub mod benchmark;
pub mod cli;
pub mod error;
pub mod filterbank;
pub mod gradcheck;
pub mod gradients;
pub mod norm_augment;
pub mod tensor;
pub mod time_frequency;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
