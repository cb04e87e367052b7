use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::rng::{normal_vec, RngStream};

pub const DEFAULT_GAMMA: f64 = 0.015;

/// Additive spread-spectrum watermark `x + γ·Σ_i (2m_i − 1)·p_i` with
/// correlation-sign extraction.
///
/// Each pattern `p_i` is zero-sum inside every 2×2 pixel cell, so it carries
/// no DC or low-frequency energy and `⟨c, p_i⟩ = 0` for any constant `c`.
/// Patterns are scaled to `‖p_i‖² = HW/K`, which gives the summed watermark
/// unit per-pixel RMS; `γ` is then the per-pixel RMS of the perturbation.
type PatternCache = Mutex<HashMap<(usize, usize), Arc<Vec<Vec<f64>>>>>;

#[derive(Debug)]
pub struct SpreadSpectrum {
    pub bits: usize,
    pub gamma: f64,
    pub seed: u64,
    cache: PatternCache,
}

impl Clone for SpreadSpectrum {
    fn clone(&self) -> Self {
        SpreadSpectrum::new(self.bits, self.gamma, self.seed)
    }
}

impl PartialEq for SpreadSpectrum {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits && self.gamma == other.gamma && self.seed == other.seed
    }
}

impl SpreadSpectrum {
    pub fn new(bits: usize, gamma: f64, seed: u64) -> Self {
        SpreadSpectrum {
            bits,
            gamma,
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// The `K` patterns for an `h × w` luminance plane.
    pub fn patterns(&self, h: usize, w: usize) -> Arc<Vec<Vec<f64>>> {
        let mut cache = self.cache.lock().expect("pattern cache poisoned");
        cache.entry((h, w)).or_insert_with(|| Arc::new(self.generate(h, w))).clone()
    }

    fn generate(&self, h: usize, w: usize) -> Vec<Vec<f64>> {
        let root = RngStream::new(self.seed).child("spread-spectrum");
        let target = (h * w) as f64 / self.bits as f64;
        (0..self.bits)
            .map(|i| {
                let mut p: Vec<f64> = normal_vec(&mut root.index(i as u64).rng(), h * w);
                for y in (0..h).step_by(2) {
                    for x in (0..w).step_by(2) {
                        let cell: Vec<usize> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .filter(|(dy, dx)| y + dy < h && x + dx < w)
                            .map(|(dy, dx)| (y + dy) * w + x + dx)
                            .collect();
                        if cell.len() < 4 {
                            // Ragged edge of an odd-sized plane: leave it unmarked.
                            cell.iter().for_each(|&j| p[j] = 0.0);
                            continue;
                        }
                        let mean = cell.iter().map(|&j| p[j]).sum::<f64>() / 4.0;
                        cell.iter().for_each(|&j| p[j] -= mean);
                    }
                }
                let energy: f64 = p.iter().map(|v| v * v).sum();
                let k = (target / energy).sqrt();
                p.iter_mut().for_each(|v| *v *= k);
                p
            })
            .collect()
    }

    /// Unclamped luminance offset `γ·Σ_i (2m_i − 1)·p_i`.
    pub fn signal(&self, h: usize, w: usize, bits: &[bool]) -> Vec<f64> {
        let pats = self.patterns(h, w);
        let mut out = vec![0.0; h * w];
        for (p, &b) in pats.iter().zip(bits) {
            let s = if b { self.gamma } else { -self.gamma };
            for (o, &v) in out.iter_mut().zip(p) {
                *o += s * v;
            }
        }
        out
    }

    /// `⟨y − 0.5, p_i⟩` for every pattern.
    pub fn correlations(&self, plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        self.patterns(h, w)
            .iter()
            .map(|p| p.iter().zip(plane).map(|(&pv, &y)| pv * (y - 0.5)).sum())
            .collect()
    }
}
