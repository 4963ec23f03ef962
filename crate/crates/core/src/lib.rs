//! Sharpness-aware training and loss-geometry diagnostics for small vision
//! transformers, MLP-Mixers and convolutional baselines.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autodiff`], [`params`]: dense f64 tensors, a reverse-mode
//!   tape, and the role-tagged parameter vector every other module works on.
//! * [`model`]: builders and traced forward passes.
//! * [`optim`]: SGD/AdamW, schedules, clipping and the SAM wrapper.
//! * [`geometry`]: Hessian power iteration, the dense MLP Hessian, NTK
//!   conditioning, Gaussian flatness, landscapes, sparsity, linearity and
//!   attention maps.
//! * [`adversarial`]: FGSM with random start, PGD, and the fused SAM step.
//! * [`data`]: synthetic datasets, the binary dataset format, preprocessing
//!   and mixup.
//! * [`harness`]: run configs, training loop, and the artifact writers used
//!   by the `sharpgeo` CLI.

pub mod adversarial;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
