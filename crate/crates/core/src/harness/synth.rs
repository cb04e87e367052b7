use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::distortion::blur_plane;
use crate::error::{Error, Result};
use crate::rng::{normal_vec, RngStream};
use crate::tensor::{ImageTensor, Shape};

/// One procedural image: a smooth Gaussian random field over a linear
/// gradient, overlaid with a few rectangles and ellipses, softened by a
/// slight blur, then contrast stretched so its values span at least `[0.1, 0.9]`.
pub fn synth_image(size: usize, channels: usize, stream: &RngStream) -> Result<ImageTensor<f64>> {
    let shape = Shape::square(size, channels)?;
    let mut rng = stream.rng();
    let gray = synth_plane(size, &mut rng);
    if channels == 1 {
        return ImageTensor::new(shape, gray);
    }
    // Colour: a shared structure plus weak per-channel tints.
    let mut data = Vec::with_capacity(shape.len());
    let tints: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let sigma = rng.gen_range(3.0..6.0);
            let amp = rng.gen_range(0.02..0.06);
            let t = unit_field(size, sigma, &mut rng);
            t.into_iter().map(|v| amp * v).collect()
        })
        .collect();
    for (i, &g) in gray.iter().enumerate() {
        for tint in &tints {
            data.push((g + tint[i]).clamp(0.0, 1.0));
        }
    }
    ImageTensor::new(shape, data)
}

/// `n` grayscale `size × size` images, image `i` drawn from `stream.index(i)`.
pub fn synth_dataset(n: usize, size: usize, stream: &RngStream) -> Result<Vec<ImageTensor<f64>>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    if size < 16 {
        return Err(Error::invalid(format!("synthetic images must be at least 16x16, got {size}")));
    }
    (0..n).map(|i| synth_image(size, 1, &stream.index(i as u64))).collect()
}

/// Zero-mean, unit-variance low-pass field.
fn unit_field(size: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = normal_vec(rng, size * size);
    let f = blur_plane(&white, size, size, sigma);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64)
        .sqrt()
        .max(1e-12);
    f.into_iter().map(|v| (v - mean) / sd).collect()
}

fn synth_plane(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = size as f64;
    let base = rng.gen_range(0.35..0.65);
    let sigma = rng.gen_range(2.5..6.0);
    let amp = rng.gen_range(0.08..0.2);
    let field = unit_field(size, sigma, rng);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let slope = rng.gen_range(-0.3..0.3);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut p: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 / n - 0.5, (i % size) as f64 / n - 0.5);
            base + slope * (ca * x + sa * y) + amp * field[i]
        })
        .collect();

    for _ in 0..rng.gen_range(1..=3) {
        let level = rng.gen_range(0.1..0.9);
        let opacity = rng.gen_range(0.5..1.0);
        let (cy, cx) = (rng.gen_range(0.1..0.9) * n, rng.gen_range(0.1..0.9) * n);
        let (ry, rx) = (rng.gen_range(0.1..0.35) * n, rng.gen_range(0.1..0.35) * n);
        let ellipse = rng.gen_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                let inside = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    let v = &mut p[y * size + x];
                    *v += opacity * (level - *v);
                }
            }
        }
    }

    // Slight optical blur softens the shape edges.
    let p = blur_plane(&p, size, size, 0.7);

    // Stretch into a random range containing [0.1, 0.9].
    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (tlo, thi) = (rng.gen_range(0.03..0.1), rng.gen_range(0.9..0.97));
    let span = (hi - lo).max(1e-9);
    p.into_iter()
        .map(|v| (tlo + (v - lo) / span * (thi - tlo)).clamp(0.0, 1.0))
        .collect()
}
