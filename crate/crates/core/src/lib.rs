//! Synthetic low-field MRI super-resolution: a small reverse-mode tensor
//! engine, the high-field to low-field degradation pipeline, a nested U-Net
//! (U-Net++) that predicts residual images, its training loop and the
//! PSNR/SSIM evaluation used to compare it against the bilinear baseline.

pub mod degrade;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod training;
pub mod unetpp;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, OpKind, Tensor, TensorId};
