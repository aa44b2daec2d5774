//! Scalar and vector primitives shared by every other module.
//!
//! Everything here is pure; randomness flows through [`RngStream`], which
//! maps a `(seed, label)` pair to an independent ChaCha8 generator so that
//! the draw sequence of one component never depends on how many draws
//! another component made, or on which thread ran first.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive {
            name: "tau",
            value: tau,
        })
    }
}

/// `tau * log(sum_j exp(v_j / tau))`, evaluated with max-subtraction.
pub fn logsumexp(v: &[f64], tau: f64) -> Result<f64> {
    check_finite(v)?;
    check_tau(tau)?;
    Ok(logsumexp_unchecked(v, tau))
}

/// Hot-path variant of [`logsumexp`] for callers that already validated input.
#[inline]
pub fn logsumexp_unchecked(v: &[f64], tau: f64) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|&x| ((x - m) / tau).exp()).sum();
    m + tau * s.ln()
}

/// Tempered softmax. The output sums to one up to rounding.
pub fn softmax(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_finite(v)?;
    check_tau(tau)?;
    Ok(softmax_unchecked(v, tau))
}

#[inline]
pub fn softmax_unchecked(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// One Beta(a, b) variate as `X / (X + Y)` with `X ~ Gamma(a)`, `Y ~ Gamma(b)`.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let ga = Gamma::new(a, 1.0).map_err(|_| Error::NonPositive { name: "a", value: a })?;
    let gb = Gamma::new(b, 1.0).map_err(|_| Error::NonPositive { name: "b", value: b })?;
    let x = ga.sample(rng);
    let y = gb.sample(rng);
    let s = x + y;
    if s > 0.0 {
        Ok((x / s).clamp(0.0, 1.0))
    } else {
        // Both gamma draws underflowed (tiny shapes): fall back to the mean.
        Ok(a / (a + b))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A named, reproducible random substream.
///
/// Two streams with the same seed and label always produce the same
/// sequence; streams with different labels are statistically independent.
/// Labels compose hierarchically through [`RngStream::derive`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self {
            seed,
            label: label.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn derive(&self, part: impl fmt::Display) -> Self {
        Self {
            seed: self.seed,
            label: format!("{}/{}", self.label, part),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = FNV_OFFSET;
        for byte in self.label.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
        let mut state = self.seed ^ h.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

impl fmt::Display for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.label, self.seed)
    }
}

/// Fisher-Yates permutation of `0..n` drawn from `rng`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Standard normal via Box-Muller, kept local so generated data does not
/// shift when upstream distribution crates change their algorithms.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.random();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
