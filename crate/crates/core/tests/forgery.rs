use wmforge::denoiser::{AnalyticPredictor, FnPredictor, GaussianWorld, NoisePredictor, ZeroPredictor};
use wmforge::diffusion::{NoiseSchedule, StepInfo};
use wmforge::forgery::{forge_watermark, inject, refine, refinement_terms, yang_baseline, ForgeryConfig, YangBaseline};
use wmforge::harness::synth_dataset;
use wmforge::rng::{gaussian_sample, RngStream};
use wmforge::verify::calibrate_threshold;
use wmforge::watermark::{SchemeSpec, WatermarkMessage, WatermarkScheme};
use wmforge::{Error, Image, ImageTensor, Shape};

const SIGMA0: f64 = 0.1;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::standard(100).unwrap()
}

fn message(seed: u64) -> WatermarkMessage {
    WatermarkMessage::random(32, &RngStream::new(seed).child("message")).unwrap()
}

fn spread() -> WatermarkScheme {
    SchemeSpec::spread_spectrum(17).build().unwrap()
}

/// Gaussian world whose watermark is the spread-spectrum signal for `m`.
fn world(size: usize, mu: Image, m: &WatermarkMessage) -> GaussianWorld<f64> {
    let base = ImageTensor::filled(Shape::square(size, 1).unwrap(), 0.5);
    let w = spread().embed(&base, m).unwrap().sub(&base);
    GaussianWorld::new(mu, SIGMA0, w).unwrap()
}

fn random_mean(size: usize, seed: u64) -> Image {
    gaussian_sample::<f64>(Shape::square(size, 1).unwrap(), &RngStream::new(seed).child("mu")).map(|v| 0.5 + 0.1 * v)
}

fn gain(a: f64) -> f64 {
    (1.0 - a).sqrt() / (a * SIGMA0 * SIGMA0 + 1.0 - a)
}

/// Per-pixel affine map `x ↦ p·x + q·M + noise`, composed step by step from
/// the closed-form predictor.
#[derive(Clone)]
struct Affine {
    p: f64,
    q: f64,
    noise: Vec<f64>,
}

impl Affine {
    fn identity(n: usize) -> Self {
        Affine {
            p: 1.0,
            q: 0.0,
            noise: vec![0.0; n],
        }
    }

    /// `x' = cx·x + ce·ε` where `ε = k·(x − √a_eval·M)`.
    fn transfer(&mut self, a_from: f64, a_to: f64, a_eval: f64) {
        let cx = (a_to / a_from).sqrt();
        let ce = (1.0 - a_to).sqrt() - (a_to * (1.0 - a_from) / a_from).sqrt();
        let k = gain(a_eval);
        let lin = cx + ce * k;
        self.p *= lin;
        self.q = lin * self.q - ce * k * a_eval.sqrt();
        self.noise.iter_mut().for_each(|v| *v *= lin);
    }

    /// One refinement update with noise draw `z`.
    fn refine(&mut self, a: f64, eta: f64, lambda: f64, z: &[f64]) {
        let k = gain(a);
        let c = eta * k * a.sqrt() / (1.0 - a).sqrt();
        let keep = 1.0 - c - 2.0 * eta * lambda;
        self.p = keep * self.p + 2.0 * eta * lambda;
        self.q = keep * self.q + c;
        for (n, zi) in self.noise.iter_mut().zip(z) {
            *n = keep * *n - eta * k * zi;
        }
    }

    fn apply(&self, x: &Image, m: &Image) -> Vec<f64> {
        x.data()
            .iter()
            .zip(m.data())
            .zip(&self.noise)
            .map(|((xi, mi), ni)| self.p * xi + self.q * mi + ni)
            .collect()
    }
}

fn inject_oracle(sch: &NoiseSchedule, ts: usize, n: usize) -> Affine {
    let mut f = Affine::identity(n);
    for t in 0..ts {
        f.transfer(sch.alpha_bar(t), sch.alpha_bar(t + 1), sch.alpha_bar(t + 1));
    }
    for t in (1..=ts).rev() {
        f.transfer(sch.alpha_bar(t), sch.alpha_bar(t - 1), sch.alpha_bar(t));
    }
    f
}

#[test]
fn analytic_attack_matches_composed_affine_map() {
    let sch = schedule();
    let size = 16;
    let m = message(1);
    let wd = world(size, random_mean(size, 2), &m);
    let mean = wd.data_mean();
    let pred = AnalyticPredictor::new(wd);
    let cfg = ForgeryConfig {
        iterations: 30,
        ..Default::default()
    };
    let images = synth_dataset(100, size, &RngStream::new(3)).unwrap();
    let n = size * size;
    let injected = inject_oracle(&sch, cfg.inversion_depth, n);
    let a = sch.alpha_bar(cfg.t_l);
    let mut worst: f64 = 0.0;
    for (i, x) in images.iter().enumerate() {
        let xf = inject(x, &pred, &sch, &cfg).unwrap();
        let expect_f = injected.apply(x, &mean);
        worst = worst.max(
            xf.data()
                .iter()
                .zip(&expect_f)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max),
        );

        let stream = cfg.stream(i);
        let out = refine(&xf, x, &pred, &sch, &cfg, &stream).unwrap();
        let mut full = injected.clone();
        for it in 0..cfg.iterations {
            let z = gaussian_sample::<f64>(x.shape(), &stream.index(it as u64));
            full.refine(a, cfg.eta, cfg.lambda, z.data());
        }
        let expect = full.apply(x, &mean);
        for (u, v) in out.forged.data().iter().zip(&expect) {
            worst = worst.max((u - v.clamp(0.0, 1.0)).abs());
        }
    }
    assert!(worst <= 1e-8, "max abs deviation {worst:e}");
}

#[test]
fn injection_moves_images_toward_the_watermark() {
    let sch = schedule();
    let m = message(4);
    let wd = world(32, ImageTensor::filled(Shape::square(32, 1).unwrap(), 0.5), &m);
    let w = wd.w.clone();
    let pred = AnalyticPredictor::new(wd);
    let cfg = ForgeryConfig::default();
    for x in synth_dataset(50, 32, &RngStream::new(5)).unwrap() {
        let xf = inject(&x, &pred, &sch, &cfg).unwrap();
        let shift = xf.sub(&x).dot(&w);
        assert!(shift > 0.0, "⟨x^f − x, w⟩ = {shift}");
    }
}

#[test]
fn shallow_and_degenerate_injection_is_identity() {
    let sch = schedule();
    let x = &synth_dataset(1, 16, &RngStream::new(6)).unwrap()[0];
    let pred = AnalyticPredictor::new(world(16, random_mean(16, 7), &message(7)));
    let none = ForgeryConfig {
        inversion_depth: 0,
        ..Default::default()
    };
    assert_eq!(&inject(x, &pred, &sch, &none).unwrap(), x);
    for ts in [1, 40, 100] {
        let cfg = ForgeryConfig {
            inversion_depth: ts,
            ..Default::default()
        };
        let y = inject(x, &ZeroPredictor, &sch, &cfg).unwrap();
        assert!(y.max_abs_diff(x) < 1e-12, "T_S={ts}");
        assert_eq!(inject(x, &pred, &sch, &cfg).unwrap(), inject(x, &pred, &sch, &cfg).unwrap());
    }
}

#[test]
fn single_update_arithmetic() {
    let sch = schedule();
    let s = Shape::new(1, 1, 1).unwrap();
    let xf = ImageTensor::filled(s, 1.0f64);
    let x = ImageTensor::filled(s, 0.0);
    let cfg = ForgeryConfig {
        iterations: 1,
        ..Default::default()
    };
    let out = refine(&xf, &x, &ZeroPredictor, &sch, &cfg, &RngStream::new(0)).unwrap();
    assert!((out.forged.data()[0] - 0.98).abs() < 1e-12);
    assert_eq!(out.trace.len(), 2);
    assert!((out.trace[1] - 0.98f64.powi(2)).abs() < 1e-12);
}

#[test]
fn zero_iterations_or_zero_step_is_identity() {
    let sch = schedule();
    let images = synth_dataset(2, 16, &RngStream::new(8)).unwrap();
    let pred = AnalyticPredictor::new(world(16, random_mean(16, 9), &message(9)));
    let zero_l = ForgeryConfig {
        iterations: 0,
        ..Default::default()
    };
    let out = refine(&images[0], &images[1], &pred, &sch, &zero_l, &RngStream::new(1)).unwrap();
    assert_eq!(out.forged, images[0]);
    assert_eq!(out.pre_refinement, images[0]);
    assert_eq!(out.trace.len(), 1);
    let zero_eta = ForgeryConfig {
        eta: 0.0,
        iterations: 5,
        ..Default::default()
    };
    let out = refine(&images[0], &images[1], &pred, &sch, &zero_eta, &RngStream::new(1)).unwrap();
    assert_eq!(out.forged, images[0]);
    assert_eq!(out.trace.len(), 6);
}

#[test]
fn update_is_the_sum_of_score_and_fidelity_terms() {
    let sch = schedule();
    let m = message(10);
    let pred = AnalyticPredictor::new(world(16, random_mean(16, 10), &m));
    let images = synth_dataset(2, 16, &RngStream::new(11)).unwrap();
    let (xf, x) = (images[0].map(|v| 0.25 + 0.5 * v), &images[1]);
    let cfg = ForgeryConfig {
        iterations: 1,
        eta: 1e-3,
        lambda: 10.0,
        ..Default::default()
    };
    let stream = RngStream::new(12);
    let out = refine(&xf, x, &pred, &sch, &cfg, &stream).unwrap();

    let st = sch.step(cfg.t_l);
    let a = st.alpha_bar;
    let z = gaussian_sample::<f64>(x.shape(), &stream.index(0));
    let eps = pred.predict(&xf.lin_comb(a.sqrt(), &z, (1.0 - a).sqrt()), &st);
    let score = eps.map(|e| -cfg.eta * e / (1.0 - a).sqrt());
    let fidelity = xf.zip_map(x, |u, v| -2.0 * cfg.eta * cfg.lambda * (u - v));
    let (s2, f2) = refinement_terms(&xf, x, &eps, a, cfg.eta, cfg.lambda);
    assert!(s2.max_abs_diff(&score) < 1e-12);
    assert!(f2.max_abs_diff(&fidelity) < 1e-12);
    let expected = xf.add(&score).add(&fidelity);
    assert!(out.forged.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn refinement_without_fidelity_approaches_the_fixed_point() {
    // With λ = 0 the update ignores x, so passing the fixed point M as the
    // reference makes the trace the squared distance to it.
    let sch = schedule();
    let size = 16;
    let m = message(13);
    let wd = world(size, random_mean(size, 13), &m);
    let fixed = wd.data_mean();
    let pred = AnalyticPredictor::new(wd);
    let cfg = ForgeryConfig {
        lambda: 0.0,
        iterations: 100,
        ..Default::default()
    };
    let starts = synth_dataset(20, size, &RngStream::new(14)).unwrap();
    let mut mean_trace = vec![0.0; cfg.iterations + 1];
    for (i, xf) in starts.iter().enumerate() {
        let out = refine(xf, &fixed, &pred, &sch, &cfg, &cfg.stream(i)).unwrap();
        for (acc, d) in mean_trace.iter_mut().zip(&out.trace) {
            *acc += d / starts.len() as f64;
        }
    }
    let tail = &mean_trace[cfg.iterations - 50..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
}

#[test]
fn fixed_point_distance_is_non_increasing_in_lambda() {
    let sch = schedule();
    let size = 8;
    let m = message(15);
    let wd = world(size, random_mean(size, 15), &m);
    let mean = wd.data_mean();
    let pred = AnalyticPredictor::new(wd);
    let x = &synth_dataset(1, 16, &RngStream::new(16)).unwrap()[0];
    let x = ImageTensor::from_fn(mean.shape(), |r, c, ch| x.get(r, c, ch));
    let a = sch.alpha_bar(1);
    let kp = gain(a) * a.sqrt() / (1.0 - a).sqrt();
    let xf = x.map(|v| 1.0 - v);
    let mut last = f64::INFINITY;
    for lambda in [0.0, 10.0, 100.0, 1000.0] {
        // Independent solve of (k'+2λ)·x* = k'·M + 2λ·x, per pixel.
        let star = mean.zip_map(&x, |mi, xi| (kp * mi + 2.0 * lambda * xi) / (kp + 2.0 * lambda));
        let dist = star.zip_map(&x, |u, v| (u - v) * (u - v)).mean();
        assert!(dist <= last, "λ={lambda}: {dist} > {last}");
        last = dist;

        let cfg = ForgeryConfig {
            lambda,
            iterations: 3000,
            ..Default::default()
        };
        let out = refine(&xf, &x, &pred, &sch, &cfg, &RngStream::new(17)).unwrap();
        let reached = out.trace.last().unwrap();
        assert!(
            (reached - dist).abs() < 1e-4 + 0.05 * dist,
            "λ={lambda}: iterate {reached}, solve {dist}"
        );
    }
}

#[test]
fn spread_spectrum_attack_in_the_analytic_world_forges_every_bit() {
    let sch = schedule();
    let scheme = spread();
    let m = message(18);
    let shape = Shape::square(32, 1).unwrap();
    let pred = AnalyticPredictor::new(world(32, ImageTensor::filled(shape, 0.5), &m));
    let policy = calibrate_threshold(32, 1e-3, 1).unwrap();
    let cfg = ForgeryConfig::default();
    for (i, level) in [0.3, 0.45, 0.5, 0.6, 0.7].into_iter().enumerate() {
        let x = ImageTensor::filled(shape, level);
        let (out, record) = forge_watermark(&x, &pred, &sch, &scheme, &m, &policy, &cfg, &cfg.stream(i)).unwrap();
        assert_eq!(record.bit_accuracy, 1.0, "level {level}");
        assert!(record.detected);
        assert_eq!(out.trace.len(), cfg.iterations + 1);
        assert_eq!(out.forged.shape(), shape);
    }
}

#[test]
fn clean_images_extract_near_chance() {
    let scheme = spread();
    let images = synth_dataset(200, 32, &RngStream::new(19)).unwrap();
    let mean = images
        .iter()
        .enumerate()
        .map(|(i, x)| scheme.accuracy(x, &message(100 + i as u64)).unwrap())
        .sum::<f64>()
        / images.len() as f64;
    assert!((0.45..=0.55).contains(&mean), "control accuracy {mean}");
}

#[test]
fn non_finite_updates_name_the_iteration() {
    let sch = schedule();
    let x = &synth_dataset(1, 16, &RngStream::new(20)).unwrap()[0];
    let blowup = FnPredictor(|x: &Image, st: &StepInfo| x.map(|_| if st.index == 1 { f64::NAN } else { 0.0 }));
    let cfg = ForgeryConfig {
        iterations: 3,
        ..Default::default()
    };
    let err = refine(x, x, &blowup, &sch, &cfg, &RngStream::new(0)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { iteration: 0 }), "{err}");
}

#[test]
fn config_validation_and_hash() {
    let sch = schedule();
    let x = ImageTensor::filled(Shape::square(16, 1).unwrap(), 0.5);
    for bad in [
        ForgeryConfig {
            inversion_depth: 101,
            ..Default::default()
        },
        ForgeryConfig {
            t_l: 0,
            ..Default::default()
        },
        ForgeryConfig {
            eta: -1.0,
            ..Default::default()
        },
        ForgeryConfig {
            lambda: f64::NAN,
            ..Default::default()
        },
        ForgeryConfig {
            steps: 50,
            ..Default::default()
        },
    ] {
        assert!(inject(&x, &ZeroPredictor, &sch, &bad).is_err());
    }
    let a = ForgeryConfig::default();
    assert_eq!(a.hash(), ForgeryConfig::default().hash());
    assert_ne!(a.hash(), ForgeryConfig { seed: 1, ..a }.hash());
    assert_eq!(a.hash().len(), 16);
    let json = serde_json::to_string(&a).unwrap();
    assert!(json.contains("\"T_S\":40") && json.contains("\"L\":100"));
    assert_eq!(serde_json::from_str::<ForgeryConfig>(&json).unwrap(), a);
}

#[test]
fn yang_baseline_examples() {
    let clean = synth_dataset(5, 16, &RngStream::new(21)).unwrap();
    let shifted: Vec<Image> = clean.iter().map(|x| x.map(|v| v + 0.03)).collect();
    let b = YangBaseline::new(&shifted, &clean).unwrap();
    assert!(b.pattern.data().iter().all(|v| (v - 0.03).abs() < 1e-12));

    let x = ImageTensor::filled(Shape::square(16, 1).unwrap(), 0.4);
    assert_eq!(yang_baseline(&clean, &clean, &x).unwrap(), x);
    assert!(yang_baseline(&[], &clean, &x).is_err());
    let other = synth_dataset(2, 32, &RngStream::new(22)).unwrap();
    assert!(matches!(yang_baseline(&other, &clean, &x), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(b.apply(&other[0]), Err(Error::ShapeMismatch { .. })));
}
