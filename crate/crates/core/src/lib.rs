//! Pose-conditioned diffusion augmentation for few-shot driver-behaviour
//! classification.
//!
//! The pipeline synthesizes labeled samples with a pose-guided diffusion
//! generator, keeps only those a vision-language scorer rates as consistent
//! with their category prompt, mixes the survivors with real data at a
//! chosen ratio, and measures the effect on a few-shot classifier.
//!
//! Numeric code is generic over [`Scalar`]; the aliases at the bottom of
//! this file fix the common precisions.

pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod filter;
pub mod nn;
pub mod pipeline;
pub mod pose;
pub mod sample;
pub mod scalar;
pub mod tensor;
pub mod toy;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Generator32 = diffusion::Generator<f32>;
pub type Generator64 = diffusion::Generator<f64>;
pub type Classifier32 = eval::SmallCnn<f32>;
