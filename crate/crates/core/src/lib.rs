//! Restoration-based no-reference face image quality.
//!
//! A generator restores a 32x32 face toward a canonical high-quality
//! rendition; the quality of the input is the similarity between input and
//! restoration (MSE, SSIM) plus the discriminator's score of the restoration.
//! The crate also carries the training protocol, synthetic data, and the
//! biometric evaluation harness (ERC, DET, quality tertiles).
//!
//! The numeric core is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below fix the precision used by the pipeline.

pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod plot;
mod scalar;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used for training and scoring.
pub type Real = f32;
pub type Face = imaging::FaceImage<Real>;
pub type Image = imaging::Image<Real>;
pub type Net = model::Network<Real>;
pub type Params = model::Parameters<Real>;
