//! Pixel-domain quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Mean squared error after clamping both images to `[0, 1]`.
pub fn mse<S: Scalar>(a: &ImageTensor<S>, b: &ImageTensor<S>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let clamp = |v: S| v.to_f64_lossy().clamp(0.0, 1.0);
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| (clamp(u) - clamp(v)).powi(2))
        .sum();
    Ok(total / a.len() as f64)
}

/// Peak signal-to-noise ratio for unit peak: `-10·log10(MSE)`, capped at
/// [`PSNR_CAP`] when the images coincide.
pub fn psnr<S: Scalar>(a: &ImageTensor<S>, b: &ImageTensor<S>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * m.log10()).min(PSNR_CAP)
    }
}

/// Per-image outcome of an attack or embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub psnr: f64,
    pub bit_accuracy: f64,
    pub detected: bool,
}
