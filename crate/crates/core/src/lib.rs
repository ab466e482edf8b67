//! Unsupervised blind super-resolution by alternating two learners on a single
//! low-resolution observation: a kernel generator trained against covariance-
//! sampled anisotropic Gaussians, and an image generator trained against the
//! observation with a history-regularized contrastive term.
//!
//! The crate is organized bottom-up:
//!
//! * [`image_grid`]: grayscale image container, PNG round trips, bicubic resize.
//! * [`kernel`]: anisotropic Gaussian blur kernels and covariance sampling.
//! * [`degradation`]: blur + decimate + noise forward model, its adjoint, and
//!   an explicit matrix form for small instances.
//! * [`dataset`]: synthetic terrain corpus generation with manifests.
//! * [`sampling`]: similarity-scored contrastive kernel proposal against a
//!   bounded history.
//! * [`metrics`]: PSNR / SSIM for images, alignment-tolerant kernel PSNR.
//! * [`networks`]: hand-rolled f64 layers, the image U-Net, the kernel MLP,
//!   the frozen feature encoder, checkpoint serialization.
//! * [`optim`]: Adam, the alternating training loop, loss-weighted kernel
//!   meta-updates, adaptive history momentum.
//! * [`stability`]: dense linear-algebra verification of the surrogate
//!   stability bounds that justify the history term.

// Guards written as `!(x > bound)` are deliberate: they send NaN down the
// error path, which the equivalent-looking `x <= bound` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod degradation;
pub mod error;
pub mod image_grid;
pub mod kernel;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod sampling;
pub mod stability;

pub use error::CoreError;

/// Crate-wide result alias; all fallible public operations use [`CoreError`].
pub type Result<T> = std::result::Result<T, CoreError>;
