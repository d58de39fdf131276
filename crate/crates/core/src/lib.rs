//! Laplacian-pyramid single-image super-resolution.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: rank-4 tensors, reverse-mode differentiation, convolution
//!   kernels, initializers and the SGD-momentum optimizer.
//! - [`model`]: the pyramid network, its parameters and checkpoints.
//! - [`loss`]: multi-level Charbonnier data term plus gradient difference loss.
//! - [`imaging`]: PNG I/O, bicubic resampling, augmentation, patch sampling and
//!   the synthetic corpus.
//! - [`metrics`]: PSNR, SSIM and IFC on luminance, plus corpus reports.
//! - [`pipeline`]: training, inference, evaluation and the λ sweep.
//! - [`gradcheck`]: finite-difference checks of every differentiable op.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, PyramidOutput, Scale};
pub use tensor::{Graph, Real, Shape, Tensor, Var};
