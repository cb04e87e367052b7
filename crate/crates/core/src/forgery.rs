//! The forgery attack (shallow inversion, denoising, score-based refinement)
//! and the mean-residual baseline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::NoisePredictor;
use crate::diffusion::{ddim_invert, ddim_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{psnr, MetricRecord};
use crate::rng::{gaussian_sample, RngStream};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;
use crate::verify::{bit_accuracy, verify, VerificationPolicy};
use crate::watermark::{WatermarkMessage, WatermarkScheme};

/// Attack hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgeryConfig {
    /// Sampler steps `T`.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Inversion depth `T_S`.
    #[serde(rename = "T_S")]
    pub inversion_depth: usize,
    /// Refinement iterations `L`.
    #[serde(rename = "L")]
    pub iterations: usize,
    /// Low-noise step `t_l` at which the score is evaluated.
    pub t_l: usize,
    /// Step size `η`.
    pub eta: f64,
    /// Fidelity weight `λ`.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ForgeryConfig {
    fn default() -> Self {
        ForgeryConfig {
            steps: 100,
            inversion_depth: 40,
            iterations: 100,
            t_l: 1,
            eta: 1e-4,
            lambda: 100.0,
            seed: 0,
        }
    }
}

impl ForgeryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.inversion_depth > self.steps {
            return Err(Error::invalid(format!(
                "need 0 <= T_S <= T and T >= 1, got T={} T_S={}",
                self.steps, self.inversion_depth
            )));
        }
        if self.t_l == 0 || self.t_l > self.steps {
            return Err(Error::invalid(format!("t_l must lie in 1..=T, got {}", self.t_l)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta must be a non-negative finite number"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be a non-negative finite number"));
        }
        Ok(())
    }

    fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        self.validate()?;
        if schedule.steps() != self.steps {
            return Err(Error::invalid(format!(
                "config has T = {}, schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Substream for attack number `index`.
    pub fn stream(&self, index: usize) -> RngStream {
        RngStream::new(self.seed).child("attack").index(index as u64)
    }
}

/// First 16 hex digits of the SHA-256 of `value`'s JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `x^f = ddim_sample(ddim_invert(x, T_S), T_S)`.
pub fn inject<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    x: &ImageTensor<S>,
    predictor: &P,
    schedule: &NoiseSchedule,
    cfg: &ForgeryConfig,
) -> Result<ImageTensor<S>> {
    cfg.check_schedule(schedule)?;
    let latent = ddim_invert(x, cfg.inversion_depth, predictor, schedule)?;
    ddim_sample(&latent, cfg.inversion_depth, predictor, schedule)
}

/// The two parts of one refinement update: the score term
/// `−η·ε/√(1−ᾱ_{t_l})` and the fidelity term `−2ηλ·(x^f − x)`.
pub fn refinement_terms<S: Scalar>(
    x_f: &ImageTensor<S>,
    x: &ImageTensor<S>,
    eps: &ImageTensor<S>,
    alpha_bar: f64,
    eta: f64,
    lambda: f64,
) -> (ImageTensor<S>, ImageTensor<S>) {
    let score = eps.scale(S::of(-eta / (1.0 - alpha_bar).sqrt()));
    let fidelity = x_f.lin_comb(S::of(-2.0 * eta * lambda), x, S::of(2.0 * eta * lambda));
    (score, fidelity)
}

/// Output of [`refine`] and [`forge_watermark`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForgeryResult<S> {
    /// `x̂^f`, clamped to `[0, 1]`.
    pub forged: ImageTensor<S>,
    /// `x^f` before refinement.
    pub pre_refinement: ImageTensor<S>,
    /// `psnr(x, x̂^f)`.
    pub psnr_vs_clean: f64,
    /// Mean squared distance to the clean image of each iterate
    /// `x^{f(0)} … x^{f(L)}` (unclamped).
    pub trace: Vec<f64>,
}

/// `L` refinement iterations at step `t_l`, with fresh noise from `stream`
/// each iteration; the result is clamped once at the end.
pub fn refine<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    x_f: &ImageTensor<S>,
    x: &ImageTensor<S>,
    predictor: &P,
    schedule: &NoiseSchedule,
    cfg: &ForgeryConfig,
    stream: &RngStream,
) -> Result<ForgeryResult<S>> {
    cfg.check_schedule(schedule)?;
    x_f.ensure_same_shape(x)?;
    let step = schedule.step(cfg.t_l);
    let a = step.alpha_bar;
    let (ra, rn) = (S::of(a.sqrt()), S::of((1.0 - a).sqrt()));
    let dist = |y: &ImageTensor<S>| y.zip_map(x, |u, v| (u - v) * (u - v)).mean().to_f64_lossy();
    let mut cur = x_f.clone();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(dist(&cur));
    for i in 0..cfg.iterations {
        let z = gaussian_sample::<S>(x.shape(), &stream.index(i as u64));
        let noised = cur.lin_comb(ra, &z, rn);
        let eps = predictor.predict(&noised, &step);
        let (score, fidelity) = refinement_terms(&cur, x, &eps, a, cfg.eta, cfg.lambda);
        cur = cur.add(&score).add(&fidelity);
        if !cur.is_finite() {
            return Err(Error::NonFinite { iteration: i });
        }
        trace.push(dist(&cur));
    }
    let forged = cur.clamp01();
    let psnr_vs_clean = psnr(x, &forged)?;
    Ok(ForgeryResult {
        forged,
        pre_refinement: x_f.clone(),
        psnr_vs_clean,
        trace,
    })
}

/// Injection followed by refinement, scored against `m` under `policy`.
#[allow(clippy::too_many_arguments)]
pub fn forge_watermark<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    x: &ImageTensor<S>,
    predictor: &P,
    schedule: &NoiseSchedule,
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    policy: &VerificationPolicy,
    cfg: &ForgeryConfig,
    stream: &RngStream,
) -> Result<(ForgeryResult<S>, MetricRecord)> {
    let x_f = inject(x, predictor, schedule, cfg)?;
    let result = refine(&x_f, x, predictor, schedule, cfg, stream)?;
    let record = score(x, &result.forged, scheme, m, policy)?;
    Ok((result, record))
}

/// PSNR against the clean image, bit accuracy and verification decision.
pub fn score<S: Scalar>(
    clean: &ImageTensor<S>,
    candidate: &ImageTensor<S>,
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    policy: &VerificationPolicy,
) -> Result<MetricRecord> {
    let extracted = scheme.extract(candidate)?;
    Ok(MetricRecord {
        psnr: psnr(clean, candidate)?,
        bit_accuracy: bit_accuracy(m, &extracted)?,
        detected: verify(m, &extracted, policy)?.is_watermarked(),
    })
}

/// Per-image attack outcome as written to experiment reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub psnr: f64,
    pub bit_accuracy: f64,
    pub detected: bool,
    pub config_hash: String,
}

impl ImageRecord {
    pub fn new(index: usize, metrics: MetricRecord, config_hash: impl Into<String>) -> Self {
        ImageRecord {
            index,
            psnr: metrics.psnr,
            bit_accuracy: metrics.bit_accuracy,
            detected: metrics.detected,
            config_hash: config_hash.into(),
        }
    }
}

/// Mean-residual forgery: adds `mean(watermarked) − mean(clean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct YangBaseline<S> {
    pub pattern: ImageTensor<S>,
}

impl<S: Scalar> YangBaseline<S> {
    pub fn new(watermarked: &[ImageTensor<S>], clean: &[ImageTensor<S>]) -> Result<Self> {
        let (wm, cl) = (mean_image(watermarked)?, mean_image(clean)?);
        wm.ensure_same_shape(&cl)?;
        Ok(YangBaseline { pattern: wm.sub(&cl) })
    }

    pub fn apply(&self, x: &ImageTensor<S>) -> Result<ImageTensor<S>> {
        x.ensure_same_shape(&self.pattern)?;
        Ok(x.add(&self.pattern).clamp01())
    }
}

/// `clamp(x + mean(watermarked) − mean(clean))`.
pub fn yang_baseline<S: Scalar>(
    watermarked: &[ImageTensor<S>],
    clean: &[ImageTensor<S>],
    x: &ImageTensor<S>,
) -> Result<ImageTensor<S>> {
    YangBaseline::new(watermarked, clean)?.apply(x)
}

fn mean_image<S: Scalar>(set: &[ImageTensor<S>]) -> Result<ImageTensor<S>> {
    let first = set.first().ok_or_else(|| Error::invalid("image set is empty"))?;
    let mut acc = ImageTensor::zeros(first.shape());
    for x in set {
        first.ensure_same_shape(x)?;
        acc.axpy(S::one(), x);
    }
    Ok(acc.scale(S::of(1.0 / set.len() as f64)))
}
