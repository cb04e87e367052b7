use crate::diffusion::{NoiseSchedule, StepInfo};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

use super::{NoisePredictor, PredictorKind};

/// Data model `x_0 ~ N(mu + w, sigma0²·I)`: clean mean `mu`, additive
/// watermark `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWorld<S> {
    pub mu: ImageTensor<S>,
    pub sigma0: f64,
    pub w: ImageTensor<S>,
}

impl<S: Scalar> GaussianWorld<S> {
    pub fn new(mu: ImageTensor<S>, sigma0: f64, w: ImageTensor<S>) -> Result<Self> {
        mu.ensure_same_shape(&w)?;
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::invalid(format!("sigma0 must be positive, got {sigma0}")));
        }
        Ok(GaussianWorld { mu, sigma0, w })
    }

    /// Mean of the watermarked data distribution, `mu + w`.
    pub fn data_mean(&self) -> ImageTensor<S> {
        self.mu.add(&self.w)
    }

    /// Gain of the optimal predictor at noise level `alpha_bar`.
    fn gain(&self, alpha_bar: f64) -> f64 {
        (1.0 - alpha_bar).sqrt() / (alpha_bar * self.sigma0 * self.sigma0 + 1.0 - alpha_bar)
    }
}

/// Minimiser of the denoising objective for Gaussian data:
/// `E[ε | x_t] = √(1-ᾱ)·(x_t - √ᾱ·(mu+w)) / (ᾱ·σ0² + 1 - ᾱ)`.
#[derive(Debug, Clone)]
pub struct AnalyticPredictor<S> {
    world: GaussianWorld<S>,
    mean: ImageTensor<S>,
}

impl<S: Scalar> AnalyticPredictor<S> {
    pub fn new(world: GaussianWorld<S>) -> Self {
        let mean = world.data_mean();
        AnalyticPredictor { world, mean }
    }

    pub fn world(&self) -> &GaussianWorld<S> {
        &self.world
    }
}

impl<S: Scalar> NoisePredictor<S> for AnalyticPredictor<S> {
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S> {
        let a = step.alpha_bar;
        let k = S::of(self.world.gain(a));
        let ra = S::of(a.sqrt());
        x_t.zip_map(&self.mean, |x, m| k * (x - ra * m))
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::AnalyticGaussian
    }
}

/// Shift in the optimal noise prediction caused by the watermark at step `t`:
/// `√(1-ᾱ_t)·√ᾱ_t·w / (ᾱ_t·σ0² + 1 - ᾱ_t)`, the same for every `x_t`.
pub fn prediction_bias<S: Scalar>(world: &GaussianWorld<S>, schedule: &NoiseSchedule, t: usize) -> Result<ImageTensor<S>> {
    schedule.check(t)?;
    let a = schedule.alpha_bar(t);
    Ok(world.w.scale(S::of(world.gain(a) * a.sqrt())))
}
