use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::{gaussian_from, RngStream};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

use super::network::{to_planar, ForwardCache, Gradients, TinyNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Learning-rate schedule over the iterations.
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Gradients whose global L2 norm exceeds this are rescaled to it;
    /// `None` disables clipping.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

/// Multiplier applied to the base learning rate at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Linear warm-up over the first 5% of iterations, then a half-cosine
    /// down to 0 at the last iteration.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, iteration: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let warm = ((iteration + 1) as f64 / (0.05 * total as f64).max(1.0)).min(1.0);
                warm * 0.5 * (1.0 + (std::f64::consts::PI * iteration as f64 / total as f64).cos())
            }
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_clip_norm() -> Option<f64> {
    Some(10.0)
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: 3000,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            schedule: LrSchedule::Cosine,
            clip_norm: default_clip_norm(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::invalid("iterations and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be a non-negative finite number"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("clip_norm must be a positive finite number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-iteration mean batch loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.losses.len() < window {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.losses.len() - window + 1);
        let mut acc: f64 = self.losses[..window].iter().sum();
        out.push(acc / window as f64);
        for i in window..self.losses.len() {
            acc += self.losses[i] - self.losses[i - window];
            out.push(acc / window as f64);
        }
        out
    }

    /// Mean of the first `n` entries.
    pub fn head_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[..n].iter().sum::<f64>() / n as f64
    }

    /// Mean of the last `n` entries.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64
    }

    /// `iteration,loss` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }
}

/// One training example: clean image, sampler step, and the noise draw.
pub type Example<S> = (ImageTensor<S>, usize, ImageTensor<S>);

/// Mean per-element squared error `‖ε_θ(x_t, t) − ε‖²` over `batch` and its
/// gradient with respect to every network parameter.
pub fn batch_loss_grad<S: Scalar>(
    net: &TinyNet<S>,
    batch: &[Example<S>],
    schedule: &NoiseSchedule,
) -> Result<(f64, Gradients<S>)> {
    let mut grads = vec![S::zero(); net.param_count()];
    let mut total = 0.0;
    let scale = S::of(2.0 / (batch.len() as f64 * net.input_shape().len() as f64));
    let mut cache = ForwardCache::new(net.arch());
    for (x0, t, eps) in batch {
        let xt = forward_diffuse(x0, *t, schedule, eps)?;
        net.forward_into(&to_planar(&xt), &schedule.step(*t), &mut cache);
        let target = to_planar(eps);
        let resid: Vec<S> = cache.output().iter().zip(&target).map(|(&o, &e)| o - e).collect();
        total += resid.iter().map(|r| r.to_f64_lossy().powi(2)).sum::<f64>() / resid.len() as f64;
        let d_out: Vec<S> = resid.iter().map(|&r| scale * r).collect();
        net.backward(&mut cache, &d_out, &mut grads);
    }
    Ok((total / batch.len() as f64, grads))
}

/// Mean loss without gradients.
pub fn batch_loss<S: Scalar>(net: &TinyNet<S>, batch: &[Example<S>], schedule: &NoiseSchedule) -> Result<f64> {
    let mut total = 0.0;
    let mut cache = ForwardCache::new(net.arch());
    for (x0, t, eps) in batch {
        let xt = forward_diffuse(x0, *t, schedule, eps)?;
        net.forward_into(&to_planar(&xt), &schedule.step(*t), &mut cache);
        let target = to_planar(eps);
        total += cache
            .output()
            .iter()
            .zip(&target)
            .map(|(&o, &e)| (o - e).to_f64_lossy().powi(2))
            .sum::<f64>()
            / target.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// Draws `n` examples with uniform image index, uniform `t ∈ 1..=T` and
/// fresh Gaussian noise.
pub fn draw_examples<S: Scalar>(
    images: &[ImageTensor<S>],
    schedule: &NoiseSchedule,
    n: usize,
    stream: &RngStream,
) -> Vec<Example<S>> {
    let mut rng = stream.rng();
    (0..n)
        .map(|_| {
            let i = rng.gen_range(0..images.len());
            let t = rng.gen_range(1..=schedule.steps());
            let eps = gaussian_from(images[i].shape(), &mut rng);
            (images[i].clone(), t, eps)
        })
        .collect()
}

/// Held-out loss on `n` fixed draws.
pub fn eval_loss<S: Scalar>(
    net: &TinyNet<S>,
    images: &[ImageTensor<S>],
    schedule: &NoiseSchedule,
    n: usize,
    stream: &RngStream,
) -> Result<f64> {
    batch_loss(net, &draw_examples(images, schedule, n, stream), schedule)
}

/// Momentum SGD on the denoising objective.
pub fn train<S: Scalar>(
    net: &TinyNet<S>,
    corpus: &[ImageTensor<S>],
    schedule: &NoiseSchedule,
    cfg: &TrainingConfig,
) -> Result<(TinyNet<S>, LossTrace)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if let Some(bad) = corpus.iter().find(|x| x.shape() != net.input_shape()) {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_string(),
            got: bad.shape().to_string(),
        });
    }
    let mut net = net.clone();
    let mut velocity = vec![S::zero(); net.param_count()];
    let mu = S::of(cfg.momentum);
    let root = RngStream::new(cfg.seed).child("train");
    let mut trace = LossTrace::default();
    for it in 0..cfg.iterations {
        let batch = draw_examples(corpus, schedule, cfg.batch_size, &root.index(it as u64));
        let (loss, grads) = batch_loss_grad(&net, &batch, schedule)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, loss });
        }
        trace.losses.push(loss);
        if cfg.learning_rate == 0.0 {
            continue;
        }
        let lr = S::of(cfg.learning_rate * cfg.schedule.factor(it, cfg.iterations));
        let norm = grads.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        let clip = S::of(cfg.clip_norm.filter(|&c| norm > c).map_or(1.0, |c| c / norm));
        for ((p, v), &g) in net.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grads) {
            *v = mu * *v + clip * g;
            *p -= lr * *v;
        }
    }
    Ok((net, trace))
}
