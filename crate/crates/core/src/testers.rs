//! Streaming uniformity testers.
//!
//! The pan-private tester keeps a histogram that is Laplace-noised once
//! before the stream and once after it, then compares a chi-square style
//! statistic against a fixed threshold. A second tester first coarsens the
//! domain through a random partition and runs the same machinery over the
//! groups. A noiseless baseline and verdict amplification round out the set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{laplace_sample, poisson_sample, LaplaceScale, RngSeed};

/// Default constant relating the partition tester's group-level testing
/// distance to the original one: distance over `n` groups is taken as
/// `c * alpha * sqrt(n/k)` with `c = 1/(477*sqrt(10))`.
pub const DEFAULT_DISTANCE_CONSTANT: f64 = 6.629_512_914_399_118e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Uniform,
    NonUniform,
}

/// Tester parameters. `alpha` is the total variation distance the tester
/// is asked to detect, `epsilon` the privacy parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TesterConfig {
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: RngSeed,
    /// Disables both Laplace layers and Poissonization so unit tests can
    /// check the arithmetic analytically. Rejected by privacy audits.
    pub noiseless_debug: bool,
}

impl TesterConfig {
    pub fn new(k: usize, alpha: f64, epsilon: f64, seed: RngSeed) -> Result<Self> {
        let cfg = TesterConfig {
            k,
            alpha,
            epsilon,
            seed,
            noiseless_debug: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noiseless(mut self) -> Self {
        self.noiseless_debug = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::domain(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::domain(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PreStream,
    MidStream,
    Finalized,
}

/// The tester's internal state: `k` real-valued bins plus a phase marker.
/// Phases move `PreStream -> MidStream -> Finalized`, each edge exactly once.
#[derive(Debug, Clone)]
pub struct NoisyHistogram {
    bins: Vec<f64>,
    phase: Phase,
}

impl NoisyHistogram {
    /// Fresh histogram with one layer of Laplace noise already in each bin.
    pub fn with_noise<R: Rng + ?Sized>(k: usize, scale: LaplaceScale, rng: &mut R) -> Self {
        NoisyHistogram {
            bins: (0..k).map(|_| laplace_sample(scale, rng)).collect(),
            phase: Phase::PreStream,
        }
    }

    /// Noise-free histogram for analytic tests.
    pub fn exact(k: usize) -> Self {
        NoisyHistogram {
            bins: vec![0.0; k],
            phase: Phase::PreStream,
        }
    }

    pub fn begin_stream(&mut self) -> Result<()> {
        if self.phase != Phase::PreStream {
            return Err(Error::Contract("begin_stream called twice".into()));
        }
        self.phase = Phase::MidStream;
        Ok(())
    }

    pub fn increment(&mut self, bin: usize) -> Result<()> {
        if self.phase != Phase::MidStream {
            return Err(Error::Contract("increment outside the stream phase".into()));
        }
        match self.bins.get_mut(bin) {
            Some(b) => {
                *b += 1.0;
                Ok(())
            }
            None => Err(Error::domain(format!(
                "element {bin} outside domain of size {}",
                self.bins.len()
            ))),
        }
    }

    /// Second Laplace layer, then freeze.
    pub fn finalize_with_noise<R: Rng + ?Sized>(
        &mut self,
        scale: LaplaceScale,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_mid()?;
        let noise: Vec<f64> = (0..self.bins.len()).map(|_| laplace_sample(scale, rng)).collect();
        for (b, n) in self.bins.iter_mut().zip(&noise) {
            *b += n;
        }
        self.phase = Phase::Finalized;
        Ok(noise)
    }

    pub fn finalize_exact(&mut self) -> Result<()> {
        self.check_mid()?;
        self.phase = Phase::Finalized;
        Ok(())
    }

    fn check_mid(&self) -> Result<()> {
        match self.phase {
            Phase::MidStream => Ok(()),
            Phase::PreStream => Err(Error::Contract("finalize before begin_stream".into())),
            Phase::Finalized => Err(Error::Contract("finalize called twice".into())),
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }
}

/// Outcome of one tester run. The verdict is `NonUniform` exactly when the
/// statistic strictly exceeds the threshold; ties go to `Uniform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub verdict: Verdict,
    pub statistic: f64,
    pub threshold: f64,
    pub samples_consumed: u64,
}

impl TestVerdict {
    pub fn from_statistic(statistic: f64, threshold: f64, samples_consumed: u64) -> Self {
        let verdict = if statistic > threshold {
            Verdict::NonUniform
        } else {
            Verdict::Uniform
        };
        TestVerdict {
            verdict,
            statistic,
            threshold,
            samples_consumed,
        }
    }
}

/// The chi-square style statistic over `k` bins with nominal sample size
/// `m`: sum of `((H_i - m/k)^2 - H_i) / (m/k)`.
pub fn chi2_statistic(bins: &[f64], m: u64, k: usize) -> Result<f64> {
    if bins.len() != k {
        return Err(Error::domain(format!(
            "statistic needs {k} bins, got {}",
            bins.len()
        )));
    }
    if m == 0 {
        return Err(Error::domain("sample size m must be positive"));
    }
    let expected = m as f64 / k as f64;
    Ok(bins
        .iter()
        .map(|h| ((h - expected) * (h - expected) - h) / expected)
        .sum())
}

/// Statistic on a finalized histogram.
pub fn compute_statistic(hist: &NoisyHistogram, m: u64) -> Result<f64> {
    if hist.phase() != Phase::Finalized {
        return Err(Error::Contract("statistic requires a finalized histogram".into()));
    }
    chi2_statistic(hist.bins(), m, hist.k())
}

/// The analytic moment bounds behind [`threshold_t_u`] assume
/// `m >= MOMENT_BOUND_MIN_M_FACTOR * sqrt(k) / alpha^2`; below that scale
/// the threshold still computes but its separation guarantee is vacuous.
pub const MOMENT_BOUND_MIN_M_FACTOR: f64 = 1000.0;

/// Smallest sample size at which the moment bounds (and hence the
/// threshold's guarantee) apply.
pub fn moment_bound_min_m(k: usize, alpha: f64) -> u64 {
    (MOMENT_BOUND_MIN_M_FACTOR * (k as f64).sqrt() / (alpha * alpha)).ceil() as u64
}

/// Decision threshold for the noisy statistic:
/// `a^2 m/100 + 4 k^2/(e^2 m) + 24*sqrt(2) k^1.5/(e^2 m)
///  + 16*sqrt(2) k/(e sqrt(m)) + 8*sqrt(2) k^1.5/(e m)`.
///
/// The guarantee attached to this threshold needs
/// `m >= moment_bound_min_m(k, alpha)`; see [`MOMENT_BOUND_MIN_M_FACTOR`].
pub fn threshold_t_u(k: usize, m: u64, alpha: f64, epsilon: f64) -> f64 {
    assert!(k >= 1 && m >= 1 && alpha > 0.0 && epsilon > 0.0);
    let k = k as f64;
    let m = m as f64;
    let rt2 = std::f64::consts::SQRT_2;
    let k32 = k * k.sqrt();
    alpha * alpha * m / 100.0
        + 4.0 * k * k / (epsilon * epsilon * m)
        + 24.0 * rt2 * k32 / (epsilon * epsilon * m)
        + 16.0 * rt2 * k / (epsilon * m.sqrt())
        + 8.0 * rt2 * k32 / (epsilon * m)
}

/// Diagnostic companion threshold (the far-side floor from the same
/// analysis). Not used for decisions.
pub fn threshold_t_alpha(k: usize, m: u64, alpha: f64, epsilon: f64) -> f64 {
    assert!(k >= 1 && m >= 1 && alpha > 0.0 && epsilon > 0.0);
    let k = k as f64;
    let m = m as f64;
    let rt3 = 3.0f64.sqrt();
    let k32 = k * k.sqrt();
    alpha * alpha * m / 10.0 + 4.0 * k * k / (epsilon * epsilon * m)
        - 12.0 * rt3 * k32 / (epsilon * epsilon * m)
        - 4.0 * rt3 * k32 / (epsilon * m)
}

/// Per-run record of the noise and true counts, for decomposition checks
/// and moment oracles.
#[derive(Debug, Clone)]
pub struct TesterTrace {
    pub m_prime: u64,
    pub true_counts: Vec<u64>,
    pub pre_noise: Vec<f64>,
    pub post_noise: Vec<f64>,
}

/// Single-pass state machine for the pan-private tester.
///
/// Construction draws the Poissonized sample size and the first Laplace
/// layer; each `feed` consumes one stream element; `finish` applies the
/// second layer and thresholds the statistic. The histogram after any
/// number of feeds is readable through [`intrusion_view`], which is the
/// state an adversary observing the internals at that moment would see.
///
/// [`intrusion_view`]: SimplePanTester::intrusion_view
pub struct SimplePanTester {
    cfg: TesterConfig,
    m: u64,
    m_prime: u64,
    consumed: u64,
    hist: NoisyHistogram,
    true_counts: Vec<u64>,
    pre_noise: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SimplePanTester {
    pub fn new(cfg: &TesterConfig, m: u64) -> Result<Self> {
        let rng = cfg.seed.rng();
        Self::with_rng(cfg, m, rng)
    }

    pub fn with_rng(cfg: &TesterConfig, m: u64, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if m == 0 {
            return Err(Error::domain("sample size m must be positive"));
        }
        let m_prime = if cfg.noiseless_debug {
            m
        } else {
            poisson_sample(m as f64, &mut rng)
        };
        Self::build(cfg, m, m_prime, rng)
    }

    /// Variant with a caller-fixed sample size instead of a Poisson draw.
    /// Used by state-inspection audits that need the internal state after
    /// exactly `sample_size` updates.
    pub fn with_fixed_sample_size(
        cfg: &TesterConfig,
        m: u64,
        sample_size: u64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if m == 0 {
            return Err(Error::domain("sample size m must be positive"));
        }
        Self::build(cfg, m, sample_size, rng)
    }

    fn build(cfg: &TesterConfig, m: u64, m_prime: u64, mut rng: ChaCha8Rng) -> Result<Self> {
        let (hist, pre_noise) = if cfg.noiseless_debug {
            (NoisyHistogram::exact(cfg.k), vec![0.0; cfg.k])
        } else {
            let scale = LaplaceScale::from_epsilon(cfg.epsilon)?;
            let hist = NoisyHistogram::with_noise(cfg.k, scale, &mut rng);
            let pre_noise = hist.bins().to_vec();
            (hist, pre_noise)
        };
        let mut hist = hist;
        hist.begin_stream()?;
        Ok(SimplePanTester {
            cfg: *cfg,
            m,
            m_prime,
            consumed: 0,
            hist,
            true_counts: vec![0; cfg.k],
            pre_noise,
            rng,
        })
    }

    /// The Poissonized number of elements this run will consume.
    pub fn sample_size(&self) -> u64 {
        self.m_prime
    }

    pub fn remaining(&self) -> u64 {
        self.m_prime - self.consumed
    }

    pub fn feed(&mut self, element: usize) -> Result<()> {
        if self.consumed == self.m_prime {
            return Err(Error::Contract("fed past the drawn sample size".into()));
        }
        self.hist.increment(element)?;
        self.true_counts[element] += 1;
        self.consumed += 1;
        Ok(())
    }

    /// The internal state right now: what a single intrusion would observe.
    pub fn intrusion_view(&self) -> &[f64] {
        self.hist.bins()
    }

    pub fn finish(mut self) -> Result<(TestVerdict, TesterTrace)> {
        if self.consumed < self.m_prime {
            return Err(Error::StreamExhausted {
                needed: self.m_prime,
                got: self.consumed,
            });
        }
        let post_noise = if self.cfg.noiseless_debug {
            self.hist.finalize_exact()?;
            vec![0.0; self.cfg.k]
        } else {
            let scale = LaplaceScale::from_epsilon(self.cfg.epsilon)?;
            self.hist.finalize_with_noise(scale, &mut self.rng)?
        };
        let statistic = compute_statistic(&self.hist, self.m)?;
        let threshold = threshold_t_u(self.cfg.k, self.m, self.cfg.alpha, self.cfg.epsilon);
        let verdict = TestVerdict::from_statistic(statistic, threshold, self.m_prime);
        let trace = TesterTrace {
            m_prime: self.m_prime,
            true_counts: self.true_counts,
            pre_noise: self.pre_noise,
            post_noise,
        };
        Ok((verdict, trace))
    }
}

fn drive<I: Iterator<Item = usize>>(tester: &mut SimplePanTester, stream: &mut I) -> Result<()> {
    while tester.remaining() > 0 {
        match stream.next() {
            Some(x) => tester.feed(x)?,
            None => {
                return Err(Error::StreamExhausted {
                    needed: tester.sample_size(),
                    got: tester.sample_size() - tester.remaining(),
                })
            }
        }
    }
    Ok(())
}

/// Run the pan-private tester over a stream, consuming a Poissonized
/// number of elements.
pub fn simple_pan_test<I: IntoIterator<Item = usize>>(
    stream: I,
    cfg: &TesterConfig,
    m: u64,
) -> Result<TestVerdict> {
    simple_pan_test_traced(stream, cfg, m).map(|(v, _)| v)
}

/// Like [`simple_pan_test`] but also returns the noise/count trace.
pub fn simple_pan_test_traced<I: IntoIterator<Item = usize>>(
    stream: I,
    cfg: &TesterConfig,
    m: u64,
) -> Result<(TestVerdict, TesterTrace)> {
    let mut tester = SimplePanTester::new(cfg, m)?;
    let mut it = stream.into_iter();
    drive(&mut tester, &mut it)?;
    tester.finish()
}

/// Group-count rule for the partition tester, driven by the ratio
/// `k^(2/3) e^(4/3) / a^(4/3)` evaluated in 64-bit floating point.
pub fn select_partition_count(k: usize, alpha: f64, epsilon: f64) -> usize {
    let ratio = (k as f64).powf(2.0 / 3.0) * epsilon.powf(4.0 / 3.0) / alpha.powf(4.0 / 3.0);
    if ratio < 2.0 {
        2
    } else if ratio > k as f64 {
        k
    } else {
        ratio.floor() as usize
    }
}

/// A partition of `{0, ..., k-1}` into `n` groups whose sizes differ by at
/// most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    n: usize,
    groups: Vec<Vec<usize>>,
    assignment: Vec<usize>,
}

impl PartitionPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.assignment.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, element: usize) -> Option<usize> {
        self.assignment.get(element).copied()
    }
}

/// Uniformly random partition via a seeded Fisher-Yates shuffle followed by
/// contiguous slicing: `k mod n` groups of size `ceil(k/n)`, the rest of
/// size `floor(k/n)`.
pub fn random_partition<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Result<PartitionPlan> {
    if n < 2 || n > k {
        return Err(Error::domain(format!(
            "partition needs 2 <= n <= k, got n={n}, k={k}"
        )));
    }
    let mut elems: Vec<usize> = (0..k).collect();
    elems.shuffle(rng);
    let base = k / n;
    let extra = k % n;
    let mut groups = Vec::with_capacity(n);
    let mut assignment = vec![0usize; k];
    let mut offset = 0;
    for g in 0..n {
        let size = base + usize::from(g < extra);
        let group: Vec<usize> = elems[offset..offset + size].to_vec();
        for &e in &group {
            assignment[e] = g;
        }
        groups.push(group);
        offset += size;
    }
    Ok(PartitionPlan {
        n,
        groups,
        assignment,
    })
}

/// Partition-then-test: coarsen the domain into groups chosen by
/// [`select_partition_count`], then run the pan-private tester over group
/// indices with a rescaled testing distance.
pub fn pan_test<I: IntoIterator<Item = usize>>(
    stream: I,
    cfg: &TesterConfig,
    m: u64,
) -> Result<TestVerdict> {
    pan_test_with_constant(stream, cfg, m, DEFAULT_DISTANCE_CONSTANT)
}

/// [`pan_test`] with an explicit distance constant. When the rule selects
/// `n = k` the partition is a pure relabeling and the original distance is
/// kept as-is.
pub fn pan_test_with_constant<I: IntoIterator<Item = usize>>(
    stream: I,
    cfg: &TesterConfig,
    m: u64,
    distance_constant: f64,
) -> Result<TestVerdict> {
    cfg.validate()?;
    if !(distance_constant > 0.0 && distance_constant <= 1.0) {
        return Err(Error::domain(format!(
            "distance constant must lie in (0, 1], got {distance_constant}"
        )));
    }
    let n = select_partition_count(cfg.k, cfg.alpha, cfg.epsilon);
    let mut partition_rng = cfg.seed.substream(0).rng();
    let plan = random_partition(cfg.k, n, &mut partition_rng)?;
    let alpha_eff = if n == cfg.k {
        cfg.alpha
    } else {
        (distance_constant * cfg.alpha * (n as f64 / cfg.k as f64).sqrt()).min(1.0)
    };
    let inner = TesterConfig {
        k: n,
        alpha: alpha_eff,
        epsilon: cfg.epsilon,
        seed: cfg.seed.substream(1),
        noiseless_debug: cfg.noiseless_debug,
    };
    let mut tester = SimplePanTester::new(&inner, m)?;
    let mut it = stream.into_iter().map(|x| {
        plan.group_of(x).ok_or_else(|| {
            Error::domain(format!("element {x} outside domain of size {}", cfg.k))
        })
    });
    while tester.remaining() > 0 {
        match it.next() {
            Some(group) => tester.feed(group?)?,
            None => {
                return Err(Error::StreamExhausted {
                    needed: tester.sample_size(),
                    got: tester.sample_size() - tester.remaining(),
                })
            }
        }
    }
    tester.finish().map(|(v, _)| v)
}

/// Noiseless baseline: exact counts over a Poissonized sample, statistic
/// thresholded at `alpha^2 m / 10`.
pub fn nonprivate_chi2_test<I: IntoIterator<Item = usize>>(
    stream: I,
    k: usize,
    alpha: f64,
    m: u64,
    seed: RngSeed,
) -> Result<TestVerdict> {
    if k < 2 {
        return Err(Error::domain(format!("k must be at least 2, got {k}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if m == 0 {
        return Err(Error::domain("sample size m must be positive"));
    }
    let mut rng = seed.rng();
    let m_prime = poisson_sample(m as f64, &mut rng);
    let mut counts = vec![0.0f64; k];
    let mut it = stream.into_iter();
    for consumed in 0..m_prime {
        match it.next() {
            Some(x) if x < k => counts[x] += 1.0,
            Some(x) => {
                return Err(Error::domain(format!("element {x} outside domain of size {k}")))
            }
            None => {
                return Err(Error::StreamExhausted {
                    needed: m_prime,
                    got: consumed,
                })
            }
        }
    }
    let statistic = chi2_statistic(&counts, m, k)?;
    let threshold = alpha * alpha * m as f64 / 10.0;
    Ok(TestVerdict::from_statistic(statistic, threshold, m_prime))
}

/// Majority-style amplification: run the tester `r` times and output
/// `Uniform` exactly when the fraction of `Uniform` verdicts reaches
/// `decision_fraction`. The closure receives the repetition index so each
/// run can draw a fresh stream and fresh internal randomness.
pub fn amplify<F>(mut tester: F, r: u32, decision_fraction: f64) -> Result<TestVerdict>
where
    F: FnMut(u32) -> Result<TestVerdict>,
{
    if r == 0 {
        return Err(Error::domain("amplification needs at least one repetition"));
    }
    if !(decision_fraction > 0.0 && decision_fraction < 1.0) {
        return Err(Error::domain(format!(
            "decision fraction must lie in (0, 1), got {decision_fraction}"
        )));
    }
    let mut uniform_votes = 0u32;
    let mut consumed = 0u64;
    for i in 0..r {
        let v = tester(i)?;
        if v.verdict == Verdict::Uniform {
            uniform_votes += 1;
        }
        consumed += v.samples_consumed;
    }
    let frac_nonuniform = 1.0 - uniform_votes as f64 / r as f64;
    Ok(TestVerdict::from_statistic(
        frac_nonuniform,
        1.0 - decision_fraction,
        consumed,
    ))
}

/// Smallest repetition count that amplifies a `(p_uniform_side,
/// p_far_side)` separation to `confidence`-correct majority verdicts on
/// both sides, computed by exact binomial tail evaluation. The amplified
/// rule outputs `Uniform` when the vote fraction reaches
/// `decision_fraction`.
pub fn required_repetitions(
    p_uniform_side: f64,
    p_far_side: f64,
    decision_fraction: f64,
    confidence: f64,
    r_cap: u32,
) -> Option<u32> {
    assert!(p_far_side < p_uniform_side);
    (1..=r_cap).find(|&r| {
        let votes_needed = (decision_fraction * r as f64).ceil() as u64;
        let correct_uniform = binomial_tail_ge(r as u64, p_uniform_side, votes_needed);
        let correct_far = 1.0 - binomial_tail_ge(r as u64, p_far_side, votes_needed);
        correct_uniform >= confidence && correct_far >= confidence
    })
}

/// `P[Bin(n, p) >= k]` by direct log-space summation.
pub fn binomial_tail_ge(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut tail = 0.0;
    for i in k..=n {
        let ln_term = ln_choose(n, i) + i as f64 * ln_p + (n - i) as f64 * ln_q;
        tail += ln_term.exp();
    }
    tail.min(1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}
