//! Noise schedule, closed-form forward diffusion, deterministic DDIM sampling
//! and DDIM inversion.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngStream};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;
use crate::verify::matches;
use crate::watermark::{WatermarkMessage, WatermarkScheme};

/// Cumulative signal coefficients `ᾱ_t` on a strided sampler grid.
///
/// `alpha_bar[0] = 1` and `alpha_bar[t]` for `t = 1..=steps` is the product
/// of `(1 - β_s)` over the first `timestep_map[t - 1]` base steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    base_steps: usize,
    steps: usize,
    alpha_bar: Vec<f64>,
    timestep_map: Vec<usize>,
}

/// Everything a noise predictor needs to know about a sampler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Sampler index in `0..=T`.
    pub index: usize,
    /// Index on the base (training) grid; 0 for the clean step.
    pub base: usize,
    pub alpha_bar: f64,
}

impl NoiseSchedule {
    /// Linear β grid over `base_steps`, strided evenly down to `steps` sampler steps.
    pub fn linear(base_steps: usize, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        if steps == 0 || steps > base_steps {
            return Err(Error::invalid(format!(
                "need 1 <= T <= base_steps, got T={steps}, base={base_steps}"
            )));
        }
        let mut base_alpha = Vec::with_capacity(base_steps + 1);
        base_alpha.push(1.0);
        let denom = (base_steps.max(2) - 1) as f64;
        let mut acc = 1.0;
        for s in 1..=base_steps {
            let beta = beta_min + (beta_max - beta_min) * (s - 1) as f64 / denom;
            acc *= 1.0 - beta;
            base_alpha.push(acc);
        }
        let stride = base_steps / steps;
        let timestep_map: Vec<usize> = (1..=steps).map(|t| t * stride).collect();
        let mut alpha_bar = vec![1.0];
        alpha_bar.extend(timestep_map.iter().map(|&b| base_alpha[b]));
        Ok(NoiseSchedule {
            base_steps,
            steps,
            alpha_bar,
            timestep_map,
        })
    }

    /// 1000 base steps, β ∈ [1e-4, 0.02], strided to `steps`.
    pub fn standard(steps: usize) -> Result<Self> {
        Self::linear(1000, steps, 1e-4, 0.02)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn timestep_map(&self) -> &[usize] {
        &self.timestep_map
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::TimestepOutOfRange { t, max: self.steps });
        }
        Ok(())
    }

    pub fn step(&self, t: usize) -> StepInfo {
        StepInfo {
            index: t,
            base: if t == 0 { 0 } else { self.timestep_map[t - 1] },
            alpha_bar: self.alpha_bar[t],
        }
    }
}

/// `√ᾱ_t·x0 + √(1-ᾱ_t)·eps`.
pub fn forward_diffuse<S: Scalar>(
    x0: &ImageTensor<S>,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &ImageTensor<S>,
) -> Result<ImageTensor<S>> {
    schedule.check(t)?;
    x0.ensure_same_shape(eps)?;
    let a = schedule.alpha_bar(t);
    Ok(x0.lin_comb(S::of(a.sqrt()), eps, S::of((1.0 - a).sqrt())))
}

/// Moves a latent from noise level `a_from` to `a_to` along the deterministic
/// DDIM direction given a noise estimate `eps`.
pub fn ddim_transfer<S: Scalar>(x: &ImageTensor<S>, eps: &ImageTensor<S>, a_from: f64, a_to: f64) -> ImageTensor<S> {
    let cx = (a_to / a_from).sqrt();
    let ce = (1.0 - a_to).sqrt() - (a_to * (1.0 - a_from) / a_from).sqrt();
    x.lin_comb(S::of(cx), eps, S::of(ce))
}

/// One DDIM denoising step `x_t → x_{t-1}` with a single predictor call.
pub fn ddim_step<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    xt: &ImageTensor<S>,
    t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor<S>> {
    if t == 0 {
        return Err(Error::TimestepOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    schedule.check(t)?;
    let eps = predictor.predict(xt, &schedule.step(t));
    Ok(ddim_transfer(xt, &eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1)))
}

/// Denoises from step `from_t` down to 0. `from_t = 0` is the identity.
pub fn ddim_sample<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    xt: &ImageTensor<S>,
    from_t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor<S>> {
    schedule.check(from_t)?;
    let mut x = xt.clone();
    for t in (1..=from_t).rev() {
        x = ddim_step(&x, t, predictor, schedule)?;
    }
    Ok(x)
}

/// One inversion step `x_t → x_{t+1}`. The noise estimate is taken at the
/// destination level, `ε_θ(x_t, t+1)`, standing in for the unknown
/// `ε_θ(x_{t+1}, t+1)`.
pub fn ddim_invert_step<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    xt: &ImageTensor<S>,
    t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor<S>> {
    if t >= schedule.steps() {
        return Err(Error::TimestepOutOfRange {
            t: t + 1,
            max: schedule.steps(),
        });
    }
    let eps = predictor.predict(xt, &schedule.step(t + 1));
    Ok(ddim_transfer(xt, &eps, schedule.alpha_bar(t), schedule.alpha_bar(t + 1)))
}

/// Maps a clean image to its latent at step `to_t`. `to_t = 0` is the identity.
pub fn ddim_invert<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    x0: &ImageTensor<S>,
    to_t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor<S>> {
    schedule.check(to_t)?;
    let mut x = x0.clone();
    for t in 0..to_t {
        x = ddim_invert_step(&x, t, predictor, schedule)?;
    }
    Ok(x)
}

/// Ordered `(t, latent)` pairs along a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    points: Vec<(usize, ImageTensor<S>)>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn points(&self) -> &[(usize, ImageTensor<S>)] {
        &self.points
    }

    pub fn last(&self) -> &ImageTensor<S> {
        &self.points.last().expect("trajectory is never empty").1
    }

    pub fn at(&self, t: usize) -> Option<&ImageTensor<S>> {
        self.points.iter().find(|(s, _)| *s == t).map(|(_, x)| x)
    }
}

/// Denoising chain from `from_t` to 0, recording every latent.
pub fn ddim_trajectory<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    xt: &ImageTensor<S>,
    from_t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<Trajectory<S>> {
    schedule.check(from_t)?;
    let mut points = vec![(from_t, xt.clone())];
    for t in (1..=from_t).rev() {
        let next = ddim_step(&points.last().unwrap().1, t, predictor, schedule)?;
        points.push((t - 1, next));
    }
    Ok(Trajectory { points })
}

/// Inversion chain from 0 to `to_t`, recording every latent.
pub fn inversion_trajectory<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    x0: &ImageTensor<S>,
    to_t: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
) -> Result<Trajectory<S>> {
    schedule.check(to_t)?;
    let mut points = vec![(0, x0.clone())];
    for t in 0..to_t {
        let next = ddim_invert_step(&points.last().unwrap().1, t, predictor, schedule)?;
        points.push((t + 1, next));
    }
    Ok(Trajectory { points })
}

/// One row of a detectability curve: mean bit accuracy at step `t` of the
/// noised watermarked images, of the same latents denoised back to step 0,
/// and of noised non-watermarked controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityRow {
    pub t: usize,
    pub acc_noised: f64,
    pub acc_denoised: f64,
    pub acc_control: f64,
    /// Matching bits summed over images in the noised column.
    pub matches_noised: usize,
    /// Bits examined per column.
    pub bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityCurve {
    pub rows: Vec<DetectabilityRow>,
}

impl DetectabilityCurve {
    /// `t,acc_noised,acc_denoised,acc_control` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,acc_noised,acc_denoised,acc_control\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.t, r.acc_noised, r.acc_denoised, r.acc_control);
        }
        s
    }

    pub fn row(&self, t: usize) -> Option<&DetectabilityRow> {
        self.rows.iter().find(|r| r.t == t)
    }
}

/// Measures how much watermark survives forward diffusion to each `t` in
/// `grid`, and how much the predictor restores when denoising back. Noised
/// latents are clamped to `[0, 1]` before extraction. Image `i` at step `t`
/// draws its noise from `stream.index(t).index(i)`; controls use the
/// `"control"` child.
#[allow(clippy::too_many_arguments)]
pub fn detectability_curve<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    watermarked: &[ImageTensor<S>],
    controls: &[ImageTensor<S>],
    scheme: &WatermarkScheme,
    m: &WatermarkMessage,
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &[usize],
    stream: &RngStream,
) -> Result<DetectabilityCurve> {
    if watermarked.is_empty() || controls.is_empty() {
        return Err(Error::invalid("detectability needs watermarked and control images"));
    }
    let k = m.len();
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        schedule.check(t)?;
        let st = stream.index(t as u64);
        let (mut hits_noised, mut hits_denoised, mut hits_control) = (0usize, 0usize, 0usize);
        for (i, x) in watermarked.iter().enumerate() {
            let eps = gaussian_sample::<S>(x.shape(), &st.index(i as u64));
            let noised = forward_diffuse(x, t, schedule, &eps)?;
            hits_noised += matches(m, &scheme.extract(&noised.clamp01())?)?;
            let denoised = ddim_sample(&noised, t, predictor, schedule)?;
            hits_denoised += matches(m, &scheme.extract(&denoised.clamp01())?)?;
        }
        for (i, x) in controls.iter().enumerate() {
            let eps = gaussian_sample::<S>(x.shape(), &st.child("control").index(i as u64));
            let noised = forward_diffuse(x, t, schedule, &eps)?;
            hits_control += matches(m, &scheme.extract(&noised.clamp01())?)?;
        }
        let nw = (watermarked.len() * k) as f64;
        rows.push(DetectabilityRow {
            t,
            acc_noised: hits_noised as f64 / nw,
            acc_denoised: hits_denoised as f64 / nw,
            acc_control: hits_control as f64 / (controls.len() * k) as f64,
            matches_noised: hits_noised,
            bits: watermarked.len() * k,
        });
    }
    Ok(DetectabilityCurve { rows })
}
