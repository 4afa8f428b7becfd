//! Dust and scratch removal for film scans with a residual GAN.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensorops`] – rank-4 tensors and a recording autodiff tape
//! * [`arch`] – generator, PatchGAN discriminator, residual restoration
//! * [`loss`] – pixel, gradient, perceptual and adversarial terms
//! * [`degrade`] – median filter and synthetic dust/scratch rendering
//! * [`data`] – pairs, patches, augmentation, batching, dataset I/O
//! * [`train`] – Adam, learning-rate schedule, GAN step, checkpoints
//! * [`metrics`] – PSNR / SSIM and quality reports
//! * [`infer`] – tiled whole-image restoration
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

pub mod arch;
pub mod data;
pub mod degrade;
pub mod error;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod scalar;
pub mod tensorops;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensorops::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelParams32 = arch::ModelParams<f32>;
pub type ModelParams64 = arch::ModelParams<f64>;
pub type Generator32 = arch::Generator<f32>;
pub type Generator64 = arch::Generator<f64>;
pub type Discriminator32 = arch::Discriminator<f32>;
pub type Discriminator64 = arch::Discriminator<f64>;
