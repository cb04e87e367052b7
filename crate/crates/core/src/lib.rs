//! Desk-scale laboratory for diffusion-based no-box watermark forgery.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); the aliases below fix the precision used by the
//! exact-math checks (`f64`) and by the experiment pipelines (`f32`).

pub mod denoiser;
pub mod diffusion;
pub mod distortion;
pub mod error;
pub mod forgery;
pub mod harness;
pub mod image_io;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod tensor;
mod transform;
pub mod verify;
pub mod watermark;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{ImageTensor, Shape};

/// Double-precision image, used wherever results are checked to 1e-10.
pub type Image = ImageTensor<f64>;
/// Single-precision image, used by the experiment pipelines.
pub type Image32 = ImageTensor<f32>;
/// Network in double precision (gradient checks).
pub type TinyNet64 = denoiser::TinyNet<f64>;
/// Network in single precision (training and attacks).
pub type TinyNet32 = denoiser::TinyNet<f32>;
