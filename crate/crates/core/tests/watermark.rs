use proptest::prelude::*;
use wmforge::harness::synth_dataset;
use wmforge::metrics::psnr;
use wmforge::rng::{gaussian_sample, RngStream};
use wmforge::verify::bit_accuracy;
use wmforge::watermark::{build_corpus, pool_embed, MessagePool, SchemeSpec, WatermarkMessage, WatermarkScheme, DEFAULT_BITS};
use wmforge::{Error, Image, ImageTensor, Shape};

fn schemes() -> [WatermarkScheme; 2] {
    [
        SchemeSpec::dwt_dct(7).build().unwrap(),
        SchemeSpec::spread_spectrum(7).build().unwrap(),
    ]
}

fn message(seed: u64) -> WatermarkMessage {
    WatermarkMessage::random(DEFAULT_BITS, &RngStream::new(seed).child("message")).unwrap()
}

fn gray(size: usize, v: f64) -> Image {
    ImageTensor::filled(Shape::square(size, 1).unwrap(), v)
}

#[test]
fn mid_gray_round_trip_for_both_schemes() {
    let m = message(1);
    for s in schemes() {
        for ch in [1, 3] {
            let x = ImageTensor::filled(Shape::square(32, ch).unwrap(), 0.5);
            let xw = s.embed(&x, &m).unwrap();
            assert_eq!(s.extract(&xw).unwrap(), m, "{:?} channels {ch}", s.id());
            assert!(psnr(&x, &xw).unwrap() >= 34.0);
        }
    }
}

#[test]
fn dwt_dct_geometry_and_size_errors() {
    let s = SchemeSpec::dwt_dct(0).build().unwrap();
    let WatermarkScheme::DwtDct(d) = &s else { unreachable!() };
    assert_eq!(d.geometry(32, 32).unwrap().blocks(), 4);
    assert_eq!(d.blocks_per_cycle(), 4);
    assert_eq!(d.repetitions(32, 32).unwrap(), 1);
    assert!(matches!(s.embed(&gray(16, 0.5), &message(2)), Err(Error::ImageTooSmall(_))));
    // Fewer bits fit a 16×16 image.
    let small = SchemeSpec::DwtDct {
        bits: 8,
        delta: 24.0 / 255.0,
        seed: 0,
    }
    .build()
    .unwrap();
    let m8 = WatermarkMessage::random(8, &RngStream::new(4)).unwrap();
    assert_eq!(small.extract(&small.embed(&gray(16, 0.5), &m8).unwrap()).unwrap(), m8);
}

#[test]
fn zero_strength_spread_spectrum_is_identity() {
    let s = SchemeSpec::SpreadSpectrum {
        bits: 32,
        gamma: 0.0,
        seed: 3,
    }
    .build()
    .unwrap();
    let x = &synth_dataset(1, 32, &RngStream::new(5)).unwrap()[0];
    assert_eq!(&s.embed(x, &message(3)).unwrap(), x);
}

#[test]
fn corpus_filtering_and_psnr() {
    let m = message(11);
    let stream = RngStream::new(12).child("corpus");
    for s in schemes() {
        let gen = |i: usize| wmforge::harness::synth_image(32, 1, &stream.index(i as u64)).unwrap();
        let corpus = build_corpus(gen, &s, &m, 100, true).unwrap();
        assert_eq!(corpus.images.len(), 100);
        assert!(corpus.images.iter().all(|x| s.extract(x).unwrap() == m));
        let rate = corpus.acceptance_rate();
        assert!(rate >= 0.5, "{:?} acceptance rate {rate}", s.id());

        let clean: Vec<Image> = (0..100).map(gen).collect();
        let mean_psnr = clean.iter().map(|x| psnr(x, &s.embed(x, &m).unwrap()).unwrap()).sum::<f64>() / 100.0;
        assert!(mean_psnr >= 36.0, "{:?} mean PSNR {mean_psnr}", s.id());
        let unfiltered = build_corpus(gen, &s, &m, 10, false).unwrap();
        assert_eq!(unfiltered.attempts, 10);
    }
    assert!(build_corpus(|_| gray(32, 0.5), &schemes()[0], &m, 0, true).is_err());
}

#[test]
fn exhausted_generator_is_an_error() {
    // An image already carrying the complement at ten times the default
    // strength cannot be flipped by a default-strength embedding.
    let s = SchemeSpec::spread_spectrum(1).build().unwrap();
    let loud = SchemeSpec::SpreadSpectrum {
        bits: 32,
        gamma: 0.15,
        seed: 1,
    }
    .build()
    .unwrap();
    let m = message(1);
    let poisoned = loud.embed(&gray(32, 0.5), &m.complement()).unwrap();
    let err = build_corpus(|_| poisoned.clone(), &s, &m, 3, true).unwrap_err();
    assert!(matches!(
        err,
        Error::Exhausted {
            attempts: 30,
            accepted: 0,
            requested: 3
        }
    ));
}

#[test]
fn noise_images_extract_chance_level() {
    let root = RngStream::new(21);
    for s in schemes() {
        let mut total = 0.0;
        for i in 0..500 {
            let st = root.index(i);
            let y = gaussian_sample::<f64>(Shape::square(32, 1).unwrap(), &st.child("img")).map(|v| 0.5 + 0.2 * v);
            let m = WatermarkMessage::random(32, &st.child("msg")).unwrap();
            total += s.accuracy(&y, &m).unwrap();
        }
        let mean = total / 500.0;
        assert!((0.45..=0.55).contains(&mean), "{:?}: {mean}", s.id());
    }
}

#[test]
fn spread_spectrum_ignores_sub_quantization_offsets() {
    let s = SchemeSpec::spread_spectrum(9).build().unwrap();
    let m = message(9);
    for x in synth_dataset(20, 32, &RngStream::new(30)).unwrap() {
        let y = s.embed(&x, &m).unwrap();
        let shifted = y.map(|v| v + 1.0 / 510.0);
        assert_eq!(s.extract(&shifted).unwrap(), s.extract(&y).unwrap());
    }
}

#[test]
fn spread_spectrum_keys_are_separated() {
    let m = message(40);
    let own = SchemeSpec::spread_spectrum(1).build().unwrap();
    let other = SchemeSpec::spread_spectrum(2).build().unwrap();
    let images = synth_dataset(100, 32, &RngStream::new(41)).unwrap();
    let acc = images
        .iter()
        .map(|x| other.accuracy(&own.embed(x, &m).unwrap(), &m).unwrap())
        .sum::<f64>()
        / 100.0;
    assert!((0.4..=0.6).contains(&acc), "cross-key accuracy {acc}");
}

#[test]
fn spread_spectrum_perturbation_energy_is_content_independent() {
    let s = SchemeSpec::spread_spectrum(5).build().unwrap();
    let m = message(5);
    let images = synth_dataset(10, 32, &RngStream::new(50)).unwrap();
    let energy = |x: &Image| s.perturbation(x, &m).unwrap().iter().map(|v| v * v).sum::<f64>();
    let e0 = energy(&images[0]);
    for x in &images[1..] {
        assert!((energy(x) - e0).abs() < 1e-9);
    }
}

#[test]
fn dwt_dct_embedding_is_idempotent() {
    let s = SchemeSpec::dwt_dct(3).build().unwrap();
    let m = message(60);
    for x in synth_dataset(30, 32, &RngStream::new(61)).unwrap() {
        let once = s.embed(&x, &m).unwrap();
        if s.extract(&once).unwrap() != m {
            continue;
        }
        assert_eq!(s.extract(&s.embed(&once, &m).unwrap()).unwrap(), m);
    }
}

#[test]
fn scheme_json_round_trip() {
    for s in schemes() {
        let json = s.to_json().unwrap();
        assert!(json.contains("\"identity\"") && json.contains("\"K\": 32") && json.contains("\"seed\": 7"));
        assert_eq!(WatermarkScheme::from_json(&json).unwrap(), s);
    }
    let m = message(1);
    let back: WatermarkMessage = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
    assert!("01x".parse::<WatermarkMessage>().is_err());
    assert!("".parse::<WatermarkMessage>().is_err());
}

#[test]
fn pool_embedding() {
    let s = SchemeSpec::spread_spectrum(2).build().unwrap();
    let x = &synth_dataset(1, 32, &RngStream::new(70)).unwrap()[0];
    let single = MessagePool::single(message(70));
    let (y, i) = pool_embed(&single, &s, x, &RngStream::new(1)).unwrap();
    assert_eq!(i, 0);
    assert_eq!(y, s.embed(x, single.get(0)).unwrap());

    let pool = MessagePool::random(10, 32, &RngStream::new(71)).unwrap();
    let mut counts = [0usize; 10];
    let root = RngStream::new(72).child("select");
    for j in 0..10_000 {
        let i = pool.choose(&root.index(j));
        counts[i] += 1;
    }
    assert!(counts.iter().all(|&c| (800..=1200).contains(&c)), "{counts:?}");
    assert!(MessagePool::new(vec![message(1), message(1)]).is_err());
    assert!(MessagePool::new(vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extraction_round_trips_on_mid_range_images(seed in any::<u64>(), level in 0.3f64..0.7) {
        let m = message(seed);
        for s in schemes() {
            let x = gray(32, level);
            let y = s.embed(&x, &m).unwrap();
            prop_assert_eq!(bit_accuracy(&m, &s.extract(&y).unwrap()).unwrap(), 1.0);
            prop_assert!(y.min_value() >= 0.0 && y.max_value() <= 1.0);
        }
    }
}
