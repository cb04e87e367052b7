//! Deterministic, label-addressed random streams.
//!
//! A stream is a 64-bit seed. Child streams are derived by hashing a label
//! into the parent seed, so per-image work is reproducible no matter which
//! order (or thread) it runs in:
//!
//! ```text
//! child = splitmix64(parent ^ splitmix64(fnv1a64(label)))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent substream addressed by `label`.
    pub fn child(&self, label: impl AsRef<str>) -> RngStream {
        let h = splitmix64(fnv1a64(label.as_ref().as_bytes()));
        RngStream {
            seed: splitmix64(self.seed ^ h),
        }
    }

    /// Substream addressed by an integer index (e.g. an image number).
    pub fn index(&self, i: u64) -> RngStream {
        self.child(format!("#{i}"))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws `n` i.i.d. standard normal values.
pub fn normal_vec<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            S::of(v)
        })
        .collect()
}

/// Tensor of i.i.d. N(0, 1) entries, reproducible per stream.
pub fn gaussian_sample<S: Scalar>(shape: Shape, stream: &RngStream) -> ImageTensor<S> {
    let mut rng = stream.rng();
    ImageTensor::from_raw(shape, normal_vec(&mut rng, shape.len()))
}

/// Same as [`gaussian_sample`] but continues an existing generator.
pub fn gaussian_from<S: Scalar>(shape: Shape, rng: &mut ChaCha8Rng) -> ImageTensor<S> {
    ImageTensor::from_raw(shape, normal_vec(rng, shape.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize) -> Shape {
        Shape::new(1, n, 1).unwrap()
    }

    #[test]
    fn same_stream_same_samples() {
        let s = RngStream::new(1).child("a");
        let a: ImageTensor<f64> = gaussian_sample(shape(64), &s);
        let b: ImageTensor<f64> = gaussian_sample(shape(64), &s);
        assert_eq!(a, b);
    }

    #[test]
    fn moments_over_a_million_draws() {
        // 3σ bound for the mean of 1e6 N(0,1) draws is 3e-3; variance has
        // standard error sqrt(2/n) ≈ 1.4e-3, so 1% is > 7σ.
        let t: ImageTensor<f64> = gaussian_sample(shape(1_000_000), &RngStream::new(7).child("moments"));
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn sibling_streams_are_uncorrelated() {
        let root = RngStream::new(42);
        let a: ImageTensor<f64> = gaussian_sample(shape(100_000), &root.child("left"));
        let b: ImageTensor<f64> = gaussian_sample(shape(100_000), &root.child("right"));
        let n = a.len() as f64;
        let rho = a.dot(&b) / n / ((a.dot(&a) / n).sqrt() * (b.dot(&b) / n).sqrt());
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn child_derivation_is_pure() {
        let root = RngStream::new(9);
        assert_eq!(root.child("x"), root.child("x"));
        assert_ne!(root.child("x"), root.child("y"));
        assert_ne!(root.index(0), root.index(1));
    }
}
