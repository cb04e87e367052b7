//! Bit accuracy, exact binomial threshold calibration, and the verification
//! predicate (single message and pool).

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::watermark::{MessagePool, WatermarkMessage};

/// Matching positions between two equal-length messages.
pub fn matches(m: &WatermarkMessage, m2: &WatermarkMessage) -> Result<usize> {
    if m.len() != m2.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bits", m.len()),
            got: format!("{} bits", m2.len()),
        });
    }
    Ok(m.bits().iter().zip(m2.bits()).filter(|(a, b)| a == b).count())
}

/// Fraction of matching positions.
pub fn bit_accuracy(m: &WatermarkMessage, m2: &WatermarkMessage) -> Result<f64> {
    Ok(matches(m, m2)? as f64 / m.len() as f64)
}

/// Row `n` of Pascal's triangle as big integers.
pub fn binomial_row(n: usize) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(n + 1);
    let mut c = BigUint::one();
    row.push(c.clone());
    for j in 0..n {
        c = c * BigUint::from(n - j) / BigUint::from(j + 1);
        row.push(c.clone());
    }
    row
}

/// `Σ_{j ≥ c} C(n, j)`, i.e. `2^n · P(Bin(n, ½) ≥ c)`.
pub fn upper_tail_count(n: usize, c: usize) -> BigUint {
    binomial_row(n).into_iter().skip(c).fold(BigUint::zero(), |a, b| a + b)
}

/// `num / 2^shift` rounded to the nearest `f64` (underflows to 0).
pub fn dyadic_to_f64(num: &BigUint, shift: u64) -> f64 {
    let bits = num.bits();
    if bits == 0 {
        return 0.0;
    }
    let drop = bits.saturating_sub(63);
    let top = (num >> drop).to_u64().expect("fits in 63 bits") as f64;
    let exp = drop as i64 - shift as i64;
    top * 2f64.powi(exp.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
}

/// `P(Bin(n, ½) ≥ c)`.
pub fn upper_tail(n: usize, c: usize) -> f64 {
    dyadic_to_f64(&upper_tail_count(n, c), n as u64)
}

/// Exact two-sided binomial test p-value for `successes` out of `n` fair
/// trials: twice the smaller tail, capped at 1.
pub fn binomial_two_sided_p(n: usize, successes: usize) -> f64 {
    let row = binomial_row(n);
    let lower: BigUint = row[..=successes.min(n)].iter().sum();
    let upper: BigUint = row[successes.min(n)..].iter().sum();
    let smaller = lower.min(upper);
    (2.0 * dyadic_to_f64(&smaller, n as u64)).min(1.0)
}

/// `a ≤ mant·2^exp · b` where `x = mant·2^exp` is the exact value of a
/// finite positive `f64`.
fn le_scaled(a: &BigUint, x: f64, b: &BigUint) -> bool {
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    let rhs = b * BigUint::from(mant);
    if exp >= 0 {
        *a <= rhs << exp as u64
    } else {
        (a << (-exp) as u64) <= rhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// Exact tail of `Bin(K, ½)`.
    Analytic,
    /// Percentile of match counts observed on clean images.
    Empirical,
}

/// A detection threshold: watermarked iff at least `c` of `K` bits match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    #[serde(rename = "K")]
    pub k: usize,
    pub target_fpr: f64,
    #[serde(rename = "pool_K")]
    pub pool_k: usize,
    pub c: usize,
    #[serde(default = "analytic")]
    pub calibration: Calibration,
}

fn analytic() -> Calibration {
    Calibration::Analytic
}

impl VerificationPolicy {
    /// `ρ = c / K`.
    pub fn rho(&self) -> f64 {
        self.c as f64 / self.k as f64
    }

    /// Exact null false-positive rate of one message test.
    pub fn single_fpr(&self) -> f64 {
        upper_tail(self.k, self.c)
    }
}

fn check_target(k: usize, target_fpr: f64, pool_k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if pool_k == 0 {
        return Err(Error::invalid("pool_K must be at least 1"));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::invalid(format!("target FPR must lie in (0, 1), got {target_fpr}")));
    }
    Ok(())
}

/// Smallest `c` with `P(Bin(K, ½) ≥ c) ≤ target_fpr / pool_K`, decided in
/// exact integer arithmetic.
pub fn calibrate_threshold(k: usize, target_fpr: f64, pool_k: usize) -> Result<VerificationPolicy> {
    check_target(k, target_fpr, pool_k)?;
    let row = binomial_row(k);
    let two_k = BigUint::one() << k as u64;
    let pool = BigUint::from(pool_k);
    // Walk c downwards from K, extending the tail one term at a time.
    let mut tail = BigUint::zero();
    let mut best = None;
    for c in (0..=k).rev() {
        tail += &row[c];
        if le_scaled(&(&tail * &pool), target_fpr, &two_k) {
            best = Some(c);
        } else {
            break;
        }
    }
    match best {
        Some(c) => Ok(VerificationPolicy {
            k,
            target_fpr,
            pool_k,
            c,
            calibration: Calibration::Analytic,
        }),
        None => Err(Error::Unachievable {
            target: target_fpr / pool_k as f64,
            minimum: upper_tail(k, k),
        }),
    }
}

/// Smallest `c` such that at most `target_fpr / pool_K` of the observed
/// clean-image match counts reach `c`.
pub fn calibrate_empirical(k: usize, clean_matches: &[usize], target_fpr: f64, pool_k: usize) -> Result<VerificationPolicy> {
    check_target(k, target_fpr, pool_k)?;
    if clean_matches.is_empty() {
        return Err(Error::invalid("empirical calibration needs at least one clean sample"));
    }
    if let Some(&bad) = clean_matches.iter().find(|&&m| m > k) {
        return Err(Error::invalid(format!("match count {bad} exceeds K = {k}")));
    }
    let n = clean_matches.len() as f64;
    let allowed = target_fpr / pool_k as f64;
    let c = (0..=k + 1)
        .find(|&c| clean_matches.iter().filter(|&&m| m >= c).count() as f64 / n <= allowed)
        .expect("c = K + 1 always qualifies");
    if c > k {
        return Err(Error::Unachievable {
            target: allowed,
            minimum: 1.0 / n,
        });
    }
    Ok(VerificationPolicy {
        k,
        target_fpr,
        pool_k,
        c,
        calibration: Calibration::Empirical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Watermarked,
    NonWatermarked,
}

impl Decision {
    pub fn is_watermarked(self) -> bool {
        self == Decision::Watermarked
    }
}

/// Watermarked iff bit accuracy ≥ ρ (inclusive boundary).
pub fn verify(m: &WatermarkMessage, extracted: &WatermarkMessage, policy: &VerificationPolicy) -> Result<Decision> {
    if m.len() != policy.k {
        return Err(Error::invalid(format!(
            "message has {} bits, policy expects {}",
            m.len(),
            policy.k
        )));
    }
    Ok(if matches(m, extracted)? >= policy.c {
        Decision::Watermarked
    } else {
        Decision::NonWatermarked
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolDecision {
    pub decision: Decision,
    pub best_index: usize,
    pub best_accuracy: f64,
}

/// Watermarked iff any pool message passes; reports the best-matching index
/// (first on ties).
pub fn verify_pool(extracted: &WatermarkMessage, pool: &MessagePool, policy: &VerificationPolicy) -> Result<PoolDecision> {
    if policy.pool_k != pool.len() {
        return Err(Error::invalid(format!(
            "policy calibrated for pool_K = {}, pool has {}",
            policy.pool_k,
            pool.len()
        )));
    }
    let mut best = (0, 0);
    for (i, m) in pool.messages().iter().enumerate() {
        let hits = matches(m, extracted)?;
        if hits > best.1 || i == 0 {
            best = (i, hits);
        }
    }
    let decision = verify(pool.get(best.0), extracted, policy)?;
    Ok(PoolDecision {
        decision,
        best_index: best.0,
        best_accuracy: best.1 as f64 / extracted.len() as f64,
    })
}

/// `(TPR, FPR)`: detected fraction of positives and of negatives.
pub fn empirical_rates(positives: &[bool], negatives: &[bool]) -> Result<(f64, f64)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("empirical rates need non-empty decision lists"));
    }
    let rate = |d: &[bool]| d.iter().filter(|&&x| x).count() as f64 / d.len() as f64;
    Ok((rate(positives), rate(negatives)))
}
