//! Probability primitives shared by every other module: finite discrete
//! distributions, Laplace and Poisson samplers, total variation distance,
//! and the seeded RNG scheme that makes every simulation reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors whose total mass is within this of 1 are accepted as-is.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Beyond [`SUM_TOLERANCE`] but within this, the vector is renormalized
/// with a warning. Anything further off is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Seed for a counter-based, splittable generator.
///
/// The same `(seed, stream_id)` always reproduces the same draw sequence;
/// distinct `stream_id`s give statistically independent streams, so
/// parallel trials can each own a sub-stream without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream_id: 0 }
    }

    /// Derive a reproducible child seed. Children with distinct ids land on
    /// distinct ChaCha streams (up to a negligible collision probability).
    pub fn substream(&self, child: u64) -> Self {
        RngSeed {
            seed: self.seed,
            stream_id: mix64(self.stream_id ^ mix64(child.wrapping_add(0x517c_c1b7_2722_0a95))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// splitmix64 finalizer; bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scale parameter of a zero-centered Laplace distribution. The mechanisms
/// in this crate always use `1/epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceScale {
    scale: f64,
}

impl LaplaceScale {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!(
                "laplace scale must be a positive finite real, got {scale}"
            )));
        }
        Ok(LaplaceScale { scale })
    }

    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::domain(format!(
                "epsilon must be a positive finite real, got {epsilon}"
            )));
        }
        LaplaceScale::new(1.0 / epsilon)
    }

    pub fn get(&self) -> f64 {
        self.scale
    }
}

/// Inverse CDF of the zero-centered Laplace distribution.
pub fn laplace_inverse_cdf(scale: LaplaceScale, u: f64) -> f64 {
    let centered = u - 0.5;
    -scale.get() * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// One Laplace draw via inverse CDF on a single uniform, clamped away from
/// the endpoints so the result is always finite.
pub fn laplace_sample<R: Rng + ?Sized>(scale: LaplaceScale, rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    laplace_inverse_cdf(scale, u)
}

/// Log density of the zero-centered Laplace distribution at `x`.
pub fn laplace_log_density(scale: LaplaceScale, x: f64) -> f64 {
    -(2.0 * scale.get()).ln() - x.abs() / scale.get()
}

const POISSON_INVERSION_CUTOFF: f64 = 30.0;

/// One Poisson draw. Inversion by sequential search below mean 30,
/// transformed rejection (PTRS) above.
///
/// The mean must be finite and non-negative.
pub fn poisson_sample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    assert!(
        mean >= 0.0 && mean.is_finite(),
        "poisson mean must be finite and non-negative, got {mean}"
    );
    if mean == 0.0 {
        0
    } else if mean < POISSON_INVERSION_CUTOFF {
        poisson_inversion(mean, rng)
    } else {
        poisson_ptrs(mean, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.gen();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    let cap = 1_000 + (20.0 * mean) as u64;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if k >= cap {
            break; // floating-point stall deep in the tail
        }
    }
    k
}

/// Hormann's PTRS transformed-rejection sampler.
fn poisson_ptrs<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let log_mean = mean.ln();
    loop {
        let u = rng.gen::<f64>() - 0.5;
        let v = rng.gen::<f64>();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let accept = (v * inv_alpha / (a / (us * us) + b)).ln()
            <= k * log_mean - mean - statrs::function::gamma::ln_gamma(k + 1.0);
        if accept {
            return k as u64;
        }
    }
}

/// A probability vector over the finite domain `{0, ..., k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("domain size must be at least 1"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::domain(format!("probabilities must be non-negative, got {p}")));
        }
        let sum: f64 = probs.iter().sum();
        let off = (sum - 1.0).abs();
        if off <= SUM_TOLERANCE {
            Ok(DiscreteDistribution { probs })
        } else if off <= RENORMALIZE_TOLERANCE {
            log::warn!("probability vector sums to {sum}; renormalizing");
            let probs = probs.iter().map(|p| p / sum).collect();
            Ok(DiscreteDistribution { probs })
        } else {
            Err(Error::domain(format!(
                "probability vector sums to {sum}, outside tolerance {RENORMALIZE_TOLERANCE}"
            )))
        }
    }

    /// The uniform distribution over `{0, ..., k-1}`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("uniform distribution needs k >= 1"));
        }
        Ok(DiscreteDistribution {
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// All mass on a single element.
    pub fn point_mass(k: usize, at: usize) -> Result<Self> {
        if k == 0 || at >= k {
            return Err(Error::domain(format!("point mass needs 0 <= at < k, got at={at}, k={k}")));
        }
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Ok(DiscreteDistribution { probs })
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sampler(&self) -> AliasSampler {
        AliasSampler::new(&self.probs)
    }
}

/// Total variation distance between two distributions on the same domain.
pub fn tv_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.k() != q.k() {
        return Err(Error::domain(format!(
            "tv_distance needs matching domains, got {} and {}",
            p.k(),
            q.k()
        )));
    }
    Ok(tv_between_slices(p.probs(), q.probs()))
}

pub(crate) fn tv_between_slices(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Walker/Vose alias table for O(1) draws from a discrete distribution.
#[derive(Debug, Clone)]
pub struct AliasSampler {
    accept: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasSampler {
    fn new(probs: &[f64]) -> Self {
        let k = probs.len();
        let mut accept = vec![0.0f64; k];
        let mut alias = vec![0usize; k];
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * k as f64).collect();
        let mut small: Vec<usize> = Vec::with_capacity(k);
        let mut large: Vec<usize> = Vec::with_capacity(k);
        for (i, s) in scaled.iter().enumerate() {
            if *s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let Some(&l) = large.last() {
            let Some(s) = small.pop() else { break };
            accept[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are exactly 1 up to rounding
        for i in large.into_iter().chain(small) {
            accept[i] = 1.0;
        }
        AliasSampler { accept, alias }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.accept.len());
        if rng.gen::<f64>() < self.accept[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// `count` i.i.d. draws from `p`, delivered as a once-consumable iterator.
pub fn sample_stream(p: &DiscreteDistribution, count: u64, seed: RngSeed) -> SampleStream {
    SampleStream {
        sampler: p.sampler(),
        rng: seed.rng(),
        remaining: count,
    }
}

pub struct SampleStream {
    sampler: AliasSampler,
    rng: ChaCha8Rng,
    remaining: u64,
}

impl Iterator for SampleStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.sampler.sample(&mut self.rng))
    }
}
