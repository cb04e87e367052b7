//! Image distortions for robustness evaluation, and the robustness-gap
//! forgery classifier.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngStream};
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape};
use crate::transform::{dct2, idct2, Block, N};
use crate::watermark::{WatermarkMessage, WatermarkScheme};

/// Standard luminance quantisation table (natural order).
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard chrominance quantisation table (natural order).
pub const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// A parameterised distortion. Serialises as `{"kind": ..., "parameter": ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameter", rename_all = "kebab-case")]
pub enum Distortion {
    Identity,
    /// Additive Gaussian noise, σ in pixel units.
    GaussianNoise(f64),
    /// Quantisation-only JPEG model at quality 1–100.
    Jpeg(u8),
    /// Gaussian blur with σ equal to the radius in pixels.
    Blur(f64),
    /// Multiplicative brightness, clamped.
    Brightness(f64),
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distortion::Identity => write!(f, "identity"),
            Distortion::GaussianNoise(s) => write!(f, "gaussian-noise({s})"),
            Distortion::Jpeg(q) => write!(f, "jpeg({q})"),
            Distortion::Blur(r) => write!(f, "blur({r})"),
            Distortion::Brightness(k) => write!(f, "brightness({k})"),
        }
    }
}

impl Distortion {
    pub fn kind(&self) -> &'static str {
        match self {
            Distortion::Identity => "identity",
            Distortion::GaussianNoise(_) => "gaussian-noise",
            Distortion::Jpeg(_) => "jpeg",
            Distortion::Blur(_) => "blur",
            Distortion::Brightness(_) => "brightness",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Distortion::Identity => None,
            Distortion::GaussianNoise(v) | Distortion::Blur(v) | Distortion::Brightness(v) => Some(v),
            Distortion::Jpeg(q) => Some(q as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distortion::Identity => true,
            Distortion::GaussianNoise(s) => s >= 0.0 && s.is_finite(),
            Distortion::Jpeg(q) => (1..=100).contains(&q),
            Distortion::Blur(r) => r >= 0.0 && r.is_finite() && r <= 64.0,
            Distortion::Brightness(k) => k >= 0.0 && k.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid distortion parameter: {self}")))
        }
    }

    /// Applies the distortion; only Gaussian noise consumes `stream`.
    pub fn apply<S: Scalar>(&self, x: &ImageTensor<S>, stream: &RngStream) -> Result<ImageTensor<S>> {
        self.validate()?;
        Ok(match *self {
            Distortion::Identity => x.clone(),
            Distortion::GaussianNoise(sigma) => {
                let z = gaussian_sample::<S>(x.shape(), &stream.child("gaussian-noise"));
                x.lin_comb(S::one(), &z, S::of(sigma)).clamp01()
            }
            Distortion::Jpeg(q) => jpeg(x, q),
            Distortion::Blur(r) => blur(x, r),
            Distortion::Brightness(k) => x.scale(S::of(k)).clamp01(),
        })
    }
}

/// Quality scaling of a base table: `scale = 5000/q` below 50, else
/// `200 − 2q`; entries `⌊(entry·scale + 50)/100⌋` clipped to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &e) in out.iter_mut().zip(base) {
        *o = ((e as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

/// Planes in JPEG working units (0–255): Y only for grayscale, YCbCr for colour.
fn to_planes<S: Scalar>(x: &ImageTensor<S>) -> Vec<Vec<f64>> {
    let px = x.shape().pixels();
    let d: Vec<f64> = x.data().iter().map(|v| 255.0 * v.to_f64_lossy()).collect();
    if x.channels() == 1 {
        return vec![d];
    }
    let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(px)).collect();
    for p in d.chunks_exact(3) {
        let (r, g, b) = (p[0], p[1], p[2]);
        planes[0].push(0.299 * r + 0.587 * g + 0.114 * b);
        planes[1].push(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
        planes[2].push(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
    }
    planes
}

fn from_planes<S: Scalar>(planes: &[Vec<f64>], shape: Shape) -> ImageTensor<S> {
    let data: Vec<S> = if shape.channels == 1 {
        planes[0].iter().map(|&v| S::of((v / 255.0).clamp(0.0, 1.0))).collect()
    } else {
        let mut d = Vec::with_capacity(shape.len());
        for ((&y, &cb), &cr) in planes[0].iter().zip(&planes[1]).zip(&planes[2]) {
            let (cb, cr) = (cb - 128.0, cr - 128.0);
            for v in [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb] {
                d.push(S::of((v / 255.0).clamp(0.0, 1.0)));
            }
        }
        d
    };
    ImageTensor::from_raw(shape, data)
}

/// Level-shifted 8×8 block at `(by, bx)`, edge-replicated past the border.
fn read_block(plane: &[f64], h: usize, w: usize, by: usize, bx: usize) -> Block {
    let mut b = [[0.0; N]; N];
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let y = (by * N + i).min(h - 1);
            let x = (bx * N + j).min(w - 1);
            *v = plane[y * w + x] - 128.0;
        }
    }
    b
}

/// Quantised DCT indices of every block of every plane, in block raster order.
pub fn jpeg_coefficients<S: Scalar>(x: &ImageTensor<S>, quality: u8) -> Vec<Vec<[i32; 64]>> {
    let (h, w) = (x.height(), x.width());
    let (nby, nbx) = (h.div_ceil(N), w.div_ceil(N));
    to_planes(x)
        .iter()
        .enumerate()
        .map(|(ci, plane)| {
            let table = scaled_table(if ci == 0 { &LUMA_QUANT } else { &CHROMA_QUANT }, quality);
            let mut out = Vec::with_capacity(nby * nbx);
            for by in 0..nby {
                for bx in 0..nbx {
                    let c = dct2(&read_block(plane, h, w, by, bx));
                    let mut q = [0i32; 64];
                    for k in 0..64 {
                        q[k] = (c[k / N][k % N] / table[k] as f64).round() as i32;
                    }
                    out.push(q);
                }
            }
            out
        })
        .collect()
}

/// In-memory JPEG model: quantise and dequantise block DCT coefficients with
/// the quality-scaled tables, then invert. No entropy coding, 4:4:4 chroma.
pub fn jpeg<S: Scalar>(x: &ImageTensor<S>, quality: u8) -> ImageTensor<S> {
    let (h, w) = (x.height(), x.width());
    let nbx = w.div_ceil(N);
    let coeffs = jpeg_coefficients(x, quality);
    let planes: Vec<Vec<f64>> = coeffs
        .iter()
        .enumerate()
        .map(|(ci, blocks)| {
            let table = scaled_table(if ci == 0 { &LUMA_QUANT } else { &CHROMA_QUANT }, quality);
            let mut plane = vec![0.0; h * w];
            for (bi, q) in blocks.iter().enumerate() {
                let (by, bx) = (bi / nbx, bi % nbx);
                let mut c = [[0.0; N]; N];
                for k in 0..64 {
                    c[k / N][k % N] = q[k] as f64 * table[k] as f64;
                }
                let px = idct2(&c);
                for (i, row) in px.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        let (y, xx) = (by * N + i, bx * N + j);
                        if y < h && xx < w {
                            plane[y * w + xx] = v + 128.0;
                        }
                    }
                }
            }
            plane
        })
        .collect();
    from_planes(&planes, x.shape())
}

/// Normalised 1-D Gaussian taps for `σ`, truncated at `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / z).collect()
}

/// Separable blur of one `h × w` plane with edge-replicate padding.
pub fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * plane[y * w + clampi(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

pub fn blur<S: Scalar>(x: &ImageTensor<S>, radius: f64) -> ImageTensor<S> {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let mut out = x.clone();
    for ch in 0..c {
        let plane: Vec<f64> = (0..h * w).map(|i| x.data()[i * c + ch].to_f64_lossy()).collect();
        for (i, v) in blur_plane(&plane, h, w, radius).into_iter().enumerate() {
            out.data_mut()[i * c + ch] = S::of(v);
        }
    }
    out.clamp01()
}

/// Mean bit accuracy of `images` after `d`, image `i` using `stream.index(i)`.
pub fn mean_accuracy<S: Scalar>(
    images: &[ImageTensor<S>],
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    d: &Distortion,
    stream: &RngStream,
) -> Result<f64> {
    Ok(accuracies(images, scheme, m, d, stream)?.iter().sum::<f64>() / images.len() as f64)
}

/// Per-image bit accuracies after `d`.
pub fn accuracies<S: Scalar>(
    images: &[ImageTensor<S>],
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    d: &Distortion,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::invalid("image set is empty"));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, x)| scheme.accuracy(&d.apply(x, &stream.index(i as u64))?, m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub distortion: Distortion,
    pub genuine_acc: f64,
    pub forged_acc: f64,
}

/// Mean genuine and forged accuracy per distortion; the first row is the
/// undistorted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("distortion,parameter,genuine_acc,forged_acc\n");
        for r in &self.rows {
            let p = r.distortion.parameter().map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.distortion.kind(), p, r.genuine_acc, r.forged_acc);
        }
        s
    }
}

pub fn robustness_table<S: Scalar>(
    genuine: &[ImageTensor<S>],
    forged: &[ImageTensor<S>],
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    distortions: &[Distortion],
    stream: &RngStream,
) -> Result<RobustnessTable> {
    let mut rows = Vec::with_capacity(distortions.len() + 1);
    for (k, d) in std::iter::once(&Distortion::Identity).chain(distortions).enumerate() {
        let s = stream.index(k as u64);
        rows.push(RobustnessRow {
            distortion: *d,
            genuine_acc: mean_accuracy(genuine, scheme, m, d, &s.child("genuine"))?,
            forged_acc: mean_accuracy(forged, scheme, m, d, &s.child("forged"))?,
        });
    }
    Ok(RobustnessTable { rows })
}

/// One operating point of the forgery classifier "accuracy < κ".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub kappa: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of classifying a sample as forged when its accuracy is below `κ`
/// (forged = positive, genuine = negative), sweeping `κ` over every observed
/// value plus one above the maximum. AUC by the trapezoid rule.
pub fn roc_from_scores(genuine: &[f64], forged: &[f64]) -> Result<Roc> {
    if genuine.is_empty() || forged.is_empty() {
        return Err(Error::invalid("ROC needs non-empty genuine and forged sets"));
    }
    let mut kappas: Vec<f64> = genuine.iter().chain(forged).copied().collect();
    kappas.sort_by(f64::total_cmp);
    kappas.dedup();
    kappas.push(kappas.last().unwrap() + 1.0);
    let frac = |set: &[f64], k: f64| set.iter().filter(|&&a| a < k).count() as f64 / set.len() as f64;
    let points: Vec<RocPoint> = kappas
        .iter()
        .map(|&kappa| RocPoint {
            kappa,
            tpr: frac(forged, kappa),
            fpr: frac(genuine, kappa),
        })
        .collect();
    let auc = points
        .windows(2)
        .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0)
        .sum();
    Ok(Roc { points, auc })
}

/// Applies `probe` to both sets and builds the ROC of their accuracies.
pub fn robustness_gap_roc<S: Scalar>(
    genuine: &[ImageTensor<S>],
    forged: &[ImageTensor<S>],
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    probe: &Distortion,
    stream: &RngStream,
) -> Result<Roc> {
    let g = accuracies(genuine, scheme, m, probe, &stream.child("genuine"))?;
    let f = accuracies(forged, scheme, m, probe, &stream.child("forged"))?;
    roc_from_scores(&g, &f)
}
