//! Energy-based visual anomaly detection and localization.
//!
//! A convolutional energy network is trained on defect-free images with
//! contrastive divergence, using short-run Langevin chains for negative
//! samples. Anomalies are scored from the gradient of the energy with
//! respect to the input pixels, standardized against per-pixel statistics of
//! the training set, and evaluated with AUROC at image and pixel level.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use error::{EbmError, Result};
pub use tensor::Tensor;
