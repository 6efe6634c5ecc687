//! Interleaved block-based learned image compression.
//!
//! The pipeline splits an image into `b²` interleaved sub-images, extracts
//! and refines their features with 3D convolutions, codes the refined
//! feature with a hyperprior VAE, compensates quantization error with a
//! truncated Fourier series of the sawtooth wave, and enhances the decoded
//! feature before reassembling the image.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod image_io;
pub mod interleave;
pub mod refine;
pub mod codec;
pub mod qecm;
pub mod fenm;
pub mod model;
pub mod entropy;
pub mod harness;
