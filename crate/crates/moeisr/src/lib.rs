//! Arbitrary-scale image super-resolution with per-pixel mixture-of-experts
//! decoding.
//!
//! An encoder turns a low-resolution image into a latent grid; a small
//! convolutional mapper scores, for every input pixel, how much decoder
//! capacity its reconstruction needs; and a bank of MLP experts of
//! increasing depth decodes output pixels at arbitrary target resolutions.
//! Training mixes all experts per query with Gumbel-softmax weights and a
//! balance penalty; inference dispatches each output pixel to exactly one
//! expert, which is where the compute savings come from.
//!
//! The crate is self-contained: it ships its own tensor/autodiff engine,
//! image IO, bicubic resampler, optimizer, and an analytic FLOPs profiler.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod image;
pub mod infer;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ppm;
pub mod profile;
pub mod resize;
pub mod rng;
pub mod routing;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::{Scalar, Tensor};
