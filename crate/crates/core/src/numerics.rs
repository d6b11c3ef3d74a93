//! Log-domain arithmetic, seeded initialization, and the finite-difference
//! gradient checker used by every other module's tests.
//!
//! Log-domain quantities are plain `f64` values where `NEG_INFINITY` encodes
//! probability zero; the helpers here never produce NaN from finite or
//! `-inf` inputs. Seeded randomness goes through ChaCha8 so streams are
//! reproducible across platforms.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

use crate::error::{Error, Result};

/// log(exp(a) + exp(b)) without overflow; `-inf` absorbs correctly.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log Σ exp(terms), max-shifted so no intermediate overflows.
///
/// An empty slice is an error; a slice of all `-inf` returns `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax over finite logits; rows out sum to 1 and shifting all logits by
/// a constant leaves the result unchanged.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(xs: &mut [f64]) {
    debug_assert!(xs.iter().all(|x| x.is_finite()));
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax(xs: &[f64]) -> usize {
    debug_assert!(!xs.is_empty());
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Relative error metric used by all gradient checks:
/// `|a - b| / max(1, |a| + |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, a.abs() + b.abs())
}

/// Fold several seed words into one, splitmix64-style. Used to derive
/// independent per-matrix / per-utterance streams from a master seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xff51_afd7_ed55_8ccd);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Deterministic RNG for a given seed. ChaCha8 everywhere, so streams are
/// identical across platforms and runs.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` with `fan_out = rows`,
    /// `fan_in = cols`.
    UniformScaled,
    Zeros,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-scaled" => Ok(InitScheme::UniformScaled),
            "zeros" => Ok(InitScheme::Zeros),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

/// Deterministically initialized `rows x cols` matrix. Entries are drawn
/// row-major from a ChaCha8 stream seeded with `seed`, so the result is
/// bit-identical for a given `(shape, seed, scheme)` on every platform.
pub fn seeded_init(rows: usize, cols: usize, seed: u64, scheme: InitScheme) -> Array2<f64> {
    match scheme {
        InitScheme::Zeros => Array2::zeros((rows, cols)),
        InitScheme::UniformScaled => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = seeded_rng(seed);
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
        }
    }
}

/// Central finite differences `(f(θ+ε) - f(θ-ε)) / 2ε` per scalar parameter.
///
/// `loss_fn` must be deterministic (dropout disabled or seeded). Probes run
/// independently, so this parallelizes over parameters when the `parallel`
/// feature is on.
pub fn finite_difference_gradient<F>(loss_fn: F, theta: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let probes = crate::parallel::map_range(theta.len(), |i| -> Result<f64> {
        let mut probe = theta.to_vec();
        probe[i] = theta[i] + epsilon;
        let up = loss_fn(&probe)?;
        probe[i] = theta[i] - epsilon;
        let down = loss_fn(&probe)?;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteProbe { index: i });
        }
        Ok((up - down) / (2.0 * epsilon))
    });
    probes.into_iter().collect()
}
