use proptest::prelude::*;
use wmforge::distortion::{
    blur, gaussian_kernel, jpeg, jpeg_coefficients, robustness_gap_roc, robustness_table, roc_from_scores, scaled_table,
    Distortion, CHROMA_QUANT, LUMA_QUANT,
};
use wmforge::harness::synth_dataset;
use wmforge::rng::RngStream;
use wmforge::watermark::{SchemeSpec, WatermarkMessage};
use wmforge::{Image, ImageTensor, Shape};

fn images(n: usize, seed: u64) -> Vec<Image> {
    synth_dataset(n, 32, &RngStream::new(seed)).unwrap()
}

fn mid_range(x: &Image) -> Image {
    x.map(|v| 0.25 + 0.5 * v)
}

#[test]
fn neutral_parameters_are_identities() {
    let s = RngStream::new(1);
    for x in images(3, 1) {
        assert_eq!(Distortion::Brightness(1.0).apply(&x, &s).unwrap(), x);
        assert_eq!(Distortion::GaussianNoise(0.0).apply(&x, &s).unwrap(), x);
        assert_eq!(Distortion::Identity.apply(&x, &s).unwrap(), x);
        assert_eq!(Distortion::Blur(0.0).apply(&x, &s).unwrap(), x);
    }
}

#[test]
fn quality_100_tables_are_all_ones() {
    assert!(scaled_table(&LUMA_QUANT, 100).iter().all(|&e| e == 1));
    assert!(scaled_table(&CHROMA_QUANT, 100).iter().all(|&e| e == 1));
    // Quality 50 leaves the base tables unchanged; quality 1 saturates.
    assert_eq!(scaled_table(&LUMA_QUANT, 50), LUMA_QUANT);
    assert!(scaled_table(&LUMA_QUANT, 1).iter().all(|&e| e == 255));
    // Quality 90: scale 20.
    let t90 = scaled_table(&LUMA_QUANT, 90);
    for (e, b) in t90.iter().zip(LUMA_QUANT) {
        assert_eq!(*e as u32, ((b as u32 * 20 + 50) / 100).max(1));
    }
}

/// Orthonormal 8×8 DCT-II basis function `(u, v)` evaluated at `(i, j)`.
fn basis(u: usize, v: usize, i: usize, j: usize) -> f64 {
    let c = |k: usize| {
        if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        }
    };
    let pi = std::f64::consts::PI;
    c(u) * c(v) * ((2 * i + 1) as f64 * u as f64 * pi / 16.0).cos() * ((2 * j + 1) as f64 * v as f64 * pi / 16.0).cos()
}

#[test]
fn quality_100_only_adds_transform_round_off_on_integer_spectra() {
    // Blocks built from integer DCT amplitudes survive unit quantisation, so
    // the remaining error is the floating-point transform round trip.
    let amps = [
        (0usize, 0usize, 40i32),
        (0, 1, -25),
        (2, 3, 17),
        (5, 1, 9),
        (7, 7, -6),
        (3, 0, 12),
    ];
    let shape = Shape::square(16, 1).unwrap();
    let x = ImageTensor::from_fn(shape, |r, c, _| {
        let (by, bx) = (r / 8, c / 8);
        let shift = (by * 2 + bx) as i32 - 2;
        let v: f64 = amps
            .iter()
            .map(|&(u, w, a)| (a + shift) as f64 * basis(u, w, r % 8, c % 8))
            .sum();
        (128.0 + v) / 255.0
    });
    assert!(x.min_value() > 0.0 && x.max_value() < 1.0);
    let y = jpeg(&x, 100);
    assert!(y.max_abs_diff(&x) < 1e-6, "{}", y.max_abs_diff(&x));

    // On generic content the only extra change is rounding each coefficient
    // by at most half a unit, bounded by 4 grey levels per pixel.
    for x in images(5, 2) {
        assert!(jpeg(&x, 100).max_abs_diff(&x) <= 4.0 / 255.0 + 1e-12);
    }
}

#[test]
fn jpeg_requantisation_changes_no_coefficient() {
    for (i, x) in images(10, 3).iter().enumerate() {
        let x = mid_range(x);
        for q in [50u8, 75, 90] {
            let once = jpeg(&x, q);
            let twice = jpeg(&once, q);
            assert_eq!(jpeg_coefficients(&once, q), jpeg_coefficients(&x, q), "image {i} q={q}");
            assert_eq!(jpeg_coefficients(&twice, q), jpeg_coefficients(&once, q), "image {i} q={q}");
            assert!(twice.max_abs_diff(&once) < 1e-9);
        }
    }
    // Colour images go through the YCbCr planes.
    let rgb = synth_dataset(2, 16, &RngStream::new(4)).unwrap();
    let rgb = ImageTensor::from_fn(Shape::square(16, 3).unwrap(), |r, c, ch| {
        0.3 + 0.4 * rgb[ch % 2].get(r, c, 0) * (1.0 - 0.2 * ch as f64)
    });
    let once = jpeg(&rgb, 90);
    assert_eq!(jpeg_coefficients(&jpeg(&once, 90), 90), jpeg_coefficients(&once, 90));
}

#[test]
fn blur_kernel_matches_a_direct_gaussian() {
    // Impulse response of the separable blur against the 2-D formula.
    let size = 17;
    let shape = Shape::square(size, 1).unwrap();
    let mut x = ImageTensor::zeros(shape);
    x.set(8, 8, 0, 1.0);
    let y = blur(&x, 1.0);
    let r = 3i32;
    let mut norm = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            norm += (-((dy * dy + dx * dx) as f64) / 2.0).exp();
        }
    }
    for row in 0..size {
        for col in 0..size {
            let (dy, dx) = (row as i32 - 8, col as i32 - 8);
            let expect = if dy.abs() <= r && dx.abs() <= r {
                (-((dy * dy + dx * dx) as f64) / 2.0).exp() / norm
            } else {
                0.0
            };
            assert!((y.get(row, col, 0) - expect).abs() < 1e-10, "({row},{col})");
        }
    }
    assert_eq!(gaussian_kernel(1.0).len(), 7);
    assert_eq!(gaussian_kernel(1.5).len(), 11);
    assert!((gaussian_kernel(2.3).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn blur_preserves_the_mean_on_constant_and_periodic_content() {
    let c = ImageTensor::filled(Shape::square(20, 3).unwrap(), 0.37);
    assert!(blur(&c, 1.7).max_abs_diff(&c) < 1e-12);
    for x in images(5, 5) {
        let y = blur(&x, 1.0);
        // Replicate padding shifts the mean only through border pixels.
        assert!((y.mean() - x.mean()).abs() < 0.02);
    }
    // A checkerboard away from borders averages to its mean exactly.
    let checker = ImageTensor::from_fn(
        Shape::square(32, 1).unwrap(),
        |r, c, _| if (r + c) % 2 == 0 { 0.2 } else { 0.8 },
    );
    let y = blur(&checker, 1.0);
    let interior: f64 = (4..28)
        .flat_map(|r| (4..28).map(move |c| (r, c)))
        .map(|(r, c)| y.get(r, c, 0))
        .sum::<f64>()
        / 576.0;
    assert!((interior - 0.5).abs() < 1e-6);
}

#[test]
fn invalid_parameters_are_rejected() {
    let x = &images(1, 6)[0];
    let s = RngStream::new(0);
    for d in [
        Distortion::GaussianNoise(-0.1),
        Distortion::GaussianNoise(f64::NAN),
        Distortion::Jpeg(0),
        Distortion::Jpeg(101),
        Distortion::Blur(-1.0),
        Distortion::Brightness(-2.0),
        Distortion::Brightness(f64::INFINITY),
    ] {
        assert!(d.apply(x, &s).is_err(), "{d}");
    }
}

#[test]
fn distortion_json_shape() {
    let d = Distortion::Jpeg(90);
    assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"kind":"jpeg","parameter":90}"#);
    let n: Distortion = serde_json::from_str(r#"{"kind":"gaussian-noise","parameter":0.05}"#).unwrap();
    assert_eq!(n, Distortion::GaussianNoise(0.05));
    assert_eq!(
        serde_json::from_str::<Distortion>(r#"{"kind":"identity"}"#).unwrap(),
        Distortion::Identity
    );
}

#[test]
fn noise_is_reproducible_per_stream() {
    let x = &images(1, 7)[0];
    let d = Distortion::GaussianNoise(0.05);
    assert_eq!(
        d.apply(x, &RngStream::new(3)).unwrap(),
        d.apply(x, &RngStream::new(3)).unwrap()
    );
    assert_ne!(
        d.apply(x, &RngStream::new(3)).unwrap(),
        d.apply(x, &RngStream::new(4)).unwrap()
    );
}

#[test]
fn robustness_table_rows_and_csv() {
    let scheme = SchemeSpec::spread_spectrum(8).build().unwrap();
    let m = WatermarkMessage::random(32, &RngStream::new(8)).unwrap();
    let clean = images(20, 8);
    let genuine: Vec<Image> = clean[..10].iter().map(|x| scheme.embed(x, &m).unwrap()).collect();
    let other = &clean[10..];
    let s = RngStream::new(9);

    let empty = robustness_table(&genuine, other, &scheme, &m, &[], &s).unwrap();
    assert_eq!(empty.rows.len(), 1);
    let direct = genuine.iter().map(|x| scheme.accuracy(x, &m).unwrap()).sum::<f64>() / 10.0;
    assert_eq!(empty.rows[0].distortion, Distortion::Identity);
    assert_eq!(empty.rows[0].genuine_acc, direct);

    let ds = [
        Distortion::GaussianNoise(0.05),
        Distortion::Jpeg(90),
        Distortion::Blur(1.0),
        Distortion::Brightness(6.0),
    ];
    let table = robustness_table(&genuine, other, &scheme, &m, &ds, &s).unwrap();
    assert_eq!(table.rows.len(), 5);
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "distortion,parameter,genuine_acc,forged_acc");
    assert!(lines.next().unwrap().starts_with("identity,"));
    assert!(lines.next().unwrap().starts_with("gaussian-noise,0.05,"));
    assert_eq!(csv.lines().count(), 6);
    assert!(robustness_table(&[], other, &scheme, &m, &ds, &s).is_err());
}

#[test]
fn roc_examples() {
    let a = [0.5, 0.6, 0.7, 0.9, 1.0];
    let same = roc_from_scores(&a, &a).unwrap();
    assert!((same.auc - 0.5).abs() < 1e-12, "{}", same.auc);
    let sep = roc_from_scores(&[0.9, 0.95, 1.0], &[0.4, 0.5, 0.6]).unwrap();
    assert!((sep.auc - 1.0).abs() < 1e-12);
    let first = sep.points.first().unwrap();
    let last = sep.points.last().unwrap();
    assert_eq!((first.tpr, first.fpr), (0.0, 0.0));
    assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
    assert!(roc_from_scores(&[], &a).is_err());

    // Exchangeable samples: AUC near one half.
    use rand::Rng;
    let mut rng = RngStream::new(10).rng();
    let g: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
    let f: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
    let auc = roc_from_scores(&g, &f).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.06, "{auc}");
}

#[test]
fn robustness_gap_roc_on_identical_sets_is_uninformative() {
    let scheme = SchemeSpec::spread_spectrum(11).build().unwrap();
    let m = WatermarkMessage::random(32, &RngStream::new(11)).unwrap();
    let set: Vec<Image> = images(30, 11).iter().map(|x| scheme.embed(x, &m).unwrap()).collect();
    let roc = robustness_gap_roc(&set, &set, &scheme, &m, &Distortion::Jpeg(90), &RngStream::new(1)).unwrap();
    assert!((roc.auc - 0.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distortions_keep_images_in_range(
        seed in any::<u64>(),
        sigma in 0.0f64..0.5,
        q in 1u8..=100,
        radius in 0.0f64..3.0,
        factor in 0.0f64..8.0,
        colour in any::<bool>(),
    ) {
        let ch = if colour { 3 } else { 1 };
        let base = synth_dataset(1, 16, &RngStream::new(seed)).unwrap().remove(0);
        let x = ImageTensor::from_fn(Shape::square(16, ch).unwrap(), |r, c, k| (base.get(r, c, 0) + 0.1 * k as f64).min(1.0));
        let s = RngStream::new(seed ^ 1);
        for d in [Distortion::GaussianNoise(sigma), Distortion::Jpeg(q), Distortion::Blur(radius), Distortion::Brightness(factor)] {
            let y = d.apply(&x, &s).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.min_value() >= 0.0 && y.max_value() <= 1.0, "{}", d);
        }
    }

    #[test]
    fn dimming_is_linear(seed in any::<u64>(), f in 0.0f64..=1.0, g in 0.0f64..=1.0) {
        let x = synth_dataset(1, 16, &RngStream::new(seed)).unwrap().remove(0);
        let s = RngStream::new(0);
        let fx = Distortion::Brightness(f).apply(&x, &s).unwrap();
        prop_assert!(fx.max_abs_diff(&x.scale(f)) < 1e-15);
        let fg = Distortion::Brightness(g).apply(&fx, &s).unwrap();
        prop_assert!(fg.max_abs_diff(&x.scale(f * g)) < 1e-15);
    }
}
