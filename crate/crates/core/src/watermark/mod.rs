//! Watermark schemes behind one embed/extract interface, the multi-message
//! pool, and corpus construction with perfect-extraction filtering.

mod dwt_dct;
mod message;
mod spread;

pub use dwt_dct::{BlockGeometry, DwtDct, DEFAULT_DELTA};
pub use message::{MessagePool, WatermarkMessage};
pub use spread::{SpreadSpectrum, DEFAULT_GAMMA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

pub const DEFAULT_BITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    DwtDct,
    SpreadSpectrum,
}

/// Replayable scheme description: identity, message length, strength, key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "identity", rename_all = "kebab-case")]
pub enum SchemeSpec {
    DwtDct {
        #[serde(rename = "K")]
        bits: usize,
        delta: f64,
        seed: u64,
    },
    SpreadSpectrum {
        #[serde(rename = "K")]
        bits: usize,
        gamma: f64,
        seed: u64,
    },
}

impl SchemeSpec {
    pub fn dwt_dct(seed: u64) -> Self {
        SchemeSpec::DwtDct {
            bits: DEFAULT_BITS,
            delta: DEFAULT_DELTA,
            seed,
        }
    }

    pub fn spread_spectrum(seed: u64) -> Self {
        SchemeSpec::SpreadSpectrum {
            bits: DEFAULT_BITS,
            gamma: DEFAULT_GAMMA,
            seed,
        }
    }

    pub fn build(&self) -> Result<WatermarkScheme> {
        WatermarkScheme::from_spec(*self)
    }
}

/// A keyed watermark scheme. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub enum WatermarkScheme {
    DwtDct(DwtDct),
    SpreadSpectrum(SpreadSpectrum),
}

impl WatermarkScheme {
    pub fn from_spec(spec: SchemeSpec) -> Result<Self> {
        match spec {
            SchemeSpec::DwtDct { bits, delta, seed } => {
                if bits == 0 || !(delta > 0.0 && delta.is_finite()) {
                    return Err(Error::invalid("dwt-dct needs K > 0 and a positive finite delta"));
                }
                Ok(WatermarkScheme::DwtDct(DwtDct { bits, delta, seed }))
            }
            SchemeSpec::SpreadSpectrum { bits, gamma, seed } => {
                if bits == 0 || !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::invalid("spread-spectrum needs K > 0 and a non-negative finite gamma"));
                }
                Ok(WatermarkScheme::SpreadSpectrum(SpreadSpectrum::new(bits, gamma, seed)))
            }
        }
    }

    pub fn spec(&self) -> SchemeSpec {
        match self {
            WatermarkScheme::DwtDct(s) => SchemeSpec::DwtDct {
                bits: s.bits,
                delta: s.delta,
                seed: s.seed,
            },
            WatermarkScheme::SpreadSpectrum(s) => SchemeSpec::SpreadSpectrum {
                bits: s.bits,
                gamma: s.gamma,
                seed: s.seed,
            },
        }
    }

    pub fn id(&self) -> SchemeId {
        match self {
            WatermarkScheme::DwtDct(_) => SchemeId::DwtDct,
            WatermarkScheme::SpreadSpectrum(_) => SchemeId::SpreadSpectrum,
        }
    }

    /// Message length `K`.
    pub fn bits(&self) -> usize {
        match self {
            WatermarkScheme::DwtDct(s) => s.bits,
            WatermarkScheme::SpreadSpectrum(s) => s.bits,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_spec(serde_json::from_str(s)?)
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        match self {
            WatermarkScheme::DwtDct(s) => s.geometry(h, w).map(|_| ()),
            WatermarkScheme::SpreadSpectrum(_) if h < 2 || w < 2 => Err(Error::ImageTooSmall(format!(
                "spread-spectrum needs at least 2x2 pixels, got {h}x{w}"
            ))),
            WatermarkScheme::SpreadSpectrum(_) => Ok(()),
        }
    }

    /// Luminance offset that `embed` adds before clamping.
    pub fn perturbation<S: Scalar>(&self, x: &ImageTensor<S>, m: &WatermarkMessage) -> Result<Vec<f64>> {
        if m.len() != self.bits() {
            return Err(Error::invalid(format!(
                "message has {} bits, scheme expects {}",
                m.len(),
                self.bits()
            )));
        }
        let (h, w) = (x.height(), x.width());
        self.check_size(h, w)?;
        match self {
            WatermarkScheme::DwtDct(s) => s.embed_plane(&luma(x), h, w, m.bits()),
            WatermarkScheme::SpreadSpectrum(s) => Ok(s.signal(h, w, m.bits())),
        }
    }

    /// `x^w = E(x, m)`, clamped to `[0, 1]`.
    pub fn embed<S: Scalar>(&self, x: &ImageTensor<S>, m: &WatermarkMessage) -> Result<ImageTensor<S>> {
        let offset: Vec<S> = self.perturbation(x, m)?.into_iter().map(S::of).collect();
        Ok(x.add_luminance(&offset).clamp01())
    }

    /// `m′ = D(y)`.
    pub fn extract<S: Scalar>(&self, y: &ImageTensor<S>) -> Result<WatermarkMessage> {
        let (h, w) = (y.height(), y.width());
        self.check_size(h, w)?;
        let plane = luma(y);
        let bits = match self {
            WatermarkScheme::DwtDct(s) => s.extract_plane(&plane, h, w)?,
            WatermarkScheme::SpreadSpectrum(s) => s.correlations(&plane, h, w).into_iter().map(|c| c > 0.0).collect(),
        };
        WatermarkMessage::new(bits)
    }

    /// Bit accuracy of `extract(y)` against `m`.
    pub fn accuracy<S: Scalar>(&self, y: &ImageTensor<S>, m: &WatermarkMessage) -> Result<f64> {
        crate::verify::bit_accuracy(m, &self.extract(y)?)
    }
}

fn luma<S: Scalar>(x: &ImageTensor<S>) -> Vec<f64> {
    x.luminance().into_iter().map(|v| v.to_f64_lossy()).collect()
}

/// Watermarked images plus how many candidates were drawn to obtain them.
#[derive(Debug, Clone)]
pub struct Corpus<S> {
    pub images: Vec<ImageTensor<S>>,
    pub attempts: usize,
}

impl<S> Corpus<S> {
    pub fn acceptance_rate(&self) -> f64 {
        self.images.len() as f64 / self.attempts.max(1) as f64
    }
}

/// Draws images from `generator` (called with the attempt index), embeds
/// `m`, and with `filter_perfect` keeps only those that extract `m` exactly.
/// Fails after `10·n` attempts.
pub fn build_corpus<S: Scalar>(
    mut generator: impl FnMut(usize) -> ImageTensor<S>,
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    n: usize,
    filter_perfect: bool,
) -> Result<Corpus<S>> {
    if n == 0 {
        return Err(Error::invalid("corpus size must be positive"));
    }
    let mut images = Vec::with_capacity(n);
    let limit = 10 * n;
    let mut attempts = 0;
    while images.len() < n {
        if attempts == limit {
            return Err(Error::Exhausted {
                attempts,
                accepted: images.len(),
                requested: n,
            });
        }
        let xw = scheme.embed(&generator(attempts), m)?;
        attempts += 1;
        if !filter_perfect || scheme.extract(&xw)? == *m {
            images.push(xw);
        }
    }
    Ok(Corpus { images, attempts })
}

/// Embeds a uniformly chosen pool message; returns the image and its index.
pub fn pool_embed<S: Scalar>(
    pool: &MessagePool,
    scheme: &WatermarkScheme,
    x: &ImageTensor<S>,
    stream: &RngStream,
) -> Result<(ImageTensor<S>, usize)> {
    let i = pool.choose(stream);
    Ok((scheme.embed(x, pool.get(i))?, i))
}
