//! Single-image super-resolution with a densely connected convolutional
//! network and blended channel-spatial attention.
//!
//! The crate is organized bottom-up: [`tensor`] provides the rank-4 value
//! type everything else operates on, [`layers`] the differentiable
//! primitives, [`attention`] the blended attention block, [`network`] the
//! full model assembly, [`train`] the optimizer and training loop,
//! [`data`] the degradation/patch pipeline, and [`metrics`] the PSNR/SSIM
//! evaluation protocol. [`cli`] wires the batch commands together.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
#[cfg(test)]
pub(crate) mod fdcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
