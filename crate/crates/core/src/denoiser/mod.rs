//! Noise predictors `ε_θ(x_t, t)`: the exact Gaussian-world oracle and a
//! small trainable convolutional network.

mod analytic;
mod network;
mod train;

pub use analytic::{prediction_bias, AnalyticPredictor, GaussianWorld};
pub use network::{ArchDescriptor, ForwardCache, Gradients, LayerKind, TinyNet};
pub use train::{batch_loss, batch_loss_grad, draw_examples, eval_loss, train, Example, LossTrace, LrSchedule, TrainingConfig};

use serde::{Deserialize, Serialize};

use crate::diffusion::StepInfo;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    AnalyticGaussian,
    TrainedNetwork,
    Zero,
    Custom,
}

/// A deterministic noise estimator. Output has the shape of the input.
pub trait NoisePredictor<S: Scalar>: Send + Sync {
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S>;

    fn kind(&self) -> PredictorKind {
        PredictorKind::Custom
    }
}

impl<S: Scalar, P: NoisePredictor<S> + ?Sized> NoisePredictor<S> for &P {
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S> {
        (**self).predict(x_t, step)
    }

    fn kind(&self) -> PredictorKind {
        (**self).kind()
    }
}

impl<S: Scalar, P: NoisePredictor<S> + ?Sized> NoisePredictor<S> for Box<P> {
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S> {
        (**self).predict(x_t, step)
    }

    fn kind(&self) -> PredictorKind {
        (**self).kind()
    }
}

/// `ε_θ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl<S: Scalar> NoisePredictor<S> for ZeroPredictor {
    fn predict(&self, x_t: &ImageTensor<S>, _step: &StepInfo) -> ImageTensor<S> {
        ImageTensor::zeros(x_t.shape())
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::Zero
    }
}

/// Adapts a closure into a predictor.
pub struct FnPredictor<F>(pub F);

impl<S, F> NoisePredictor<S> for FnPredictor<F>
where
    S: Scalar,
    F: Fn(&ImageTensor<S>, &StepInfo) -> ImageTensor<S> + Send + Sync,
{
    fn predict(&self, x_t: &ImageTensor<S>, step: &StepInfo) -> ImageTensor<S> {
        (self.0)(x_t, step)
    }
}
