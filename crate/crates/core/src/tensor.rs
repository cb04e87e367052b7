//! Dense H×W×C image tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of an image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        Ok(Shape { height, width, channels })
    }

    pub fn square(size: usize, channels: usize) -> Result<Self> {
        Shape::new(size, size, channels)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major, channel-interleaved image or latent.
///
/// Pixel values nominally live in `[0, 1]`; diffusion latents may leave that
/// range. Every constructor rejects non-finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<S> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> ImageTensor<S> {
    pub fn new(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(ImageTensor { shape, data })
    }

    pub fn filled(shape: Shape, value: S) -> Self {
        ImageTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, S::zero())
    }

    /// Builds a tensor from `f(y, x, c)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageTensor { shape, data }
    }

    /// Wraps data without the finiteness scan; callers guarantee the invariant.
    pub(crate) fn from_raw(shape: Shape, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        ImageTensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> S {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: S) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_string(),
                got: other.shape.to_string(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination; panics on shape mismatch (internal use after validation).
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ImageTensor { shape: self.shape, data }
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: S, other: &Self, b: S) -> Self {
        self.zip_map(other, |u, v| a * u + b * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    /// `self += k·other` in place.
    pub fn axpy(&mut self, k: S, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn dot(&self, other: &Self) -> S {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(S::zero()).min(S::one()))
    }

    pub fn min_value(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_value(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    /// Converts to another scalar precision.
    pub fn cast<T: Scalar>(&self) -> ImageTensor<T> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }

    /// Luminance plane (H×W). Grayscale images return their only channel.
    pub fn luminance(&self) -> Vec<S> {
        match self.shape.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| S::of(0.299) * p[0] + S::of(0.587) * p[1] + S::of(0.114) * p[2])
                .collect(),
        }
    }

    /// Adds a per-pixel luminance offset. For colour images the offset goes to
    /// all three channels, which leaves Cb and Cr unchanged.
    pub fn add_luminance(&self, offset: &[S]) -> Self {
        assert_eq!(offset.len(), self.shape.pixels(), "luminance offset length");
        let c = self.shape.channels;
        let mut data = self.data.clone();
        for (px, &d) in data.chunks_exact_mut(c).zip(offset) {
            for v in px {
                *v += d;
            }
        }
        ImageTensor { shape: self.shape, data }
    }
}
