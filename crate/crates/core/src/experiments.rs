//! Monte-Carlo harness: power estimation with Wilson intervals, sample-size
//! search against a fixed separation criterion, scaling curves with log-log
//! slope fits, the random-partition distance experiment, and JSON-lines
//! persistence of everything.
//!
//! Every experiment is a pure function of its configuration and seed; trial
//! `i` always runs on substream `i`, so results are identical no matter how
//! many worker threads participate.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{
    far_instance_with_tv, paninski_distribution, point_mass_perturbed, sample_decomposed_element,
    PaninskiInstance,
};
use crate::prob::{tv_distance, AliasSampler, DiscreteDistribution, RngSeed};
use crate::testers::{
    nonprivate_chi2_test, pan_test_with_constant, random_partition, simple_pan_test, TestVerdict,
    TesterConfig, Verdict, DEFAULT_DISTANCE_CONSTANT,
};

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn wilson_halfwidth(successes: u64, trials: u64, z: f64) -> f64 {
    let (lo, hi) = wilson_interval(successes, trials, z);
    (hi - lo) / 2.0
}

/// Stream length the harness materializes for a nominal sample size `m`:
/// the Poissonized draw exceeds this with probability below 1e-8, and
/// exhaustion is still a hard error rather than silent truncation.
pub fn materialized_stream_len(m: u64) -> u64 {
    let mf = m as f64;
    (mf + 6.0 * mf.sqrt() + 10.0).ceil() as u64
}

/// Anything that can produce fresh i.i.d. sample streams on demand.
pub trait StreamSource: Sync {
    fn domain_size(&self) -> usize;
    fn describe(&self) -> String;
    fn fill(&self, count: u64, seed: RngSeed, out: &mut Vec<usize>);

    fn stream(&self, count: u64, seed: RngSeed) -> Vec<usize> {
        let mut out = Vec::with_capacity(count as usize);
        self.fill(count, seed, &mut out);
        out
    }
}

/// Samples any explicit probability vector through an alias table.
pub struct DistributionSource {
    dist: DiscreteDistribution,
    sampler: AliasSampler,
    label: String,
}

impl DistributionSource {
    pub fn new(dist: DiscreteDistribution, label: impl Into<String>) -> Self {
        let sampler = dist.sampler();
        DistributionSource {
            dist,
            sampler,
            label: label.into(),
        }
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Ok(DistributionSource::new(
            DiscreteDistribution::uniform(k)?,
            format!("uniform(k={k})"),
        ))
    }

    pub fn distribution(&self) -> &DiscreteDistribution {
        &self.dist
    }
}

impl StreamSource for DistributionSource {
    fn domain_size(&self) -> usize {
        self.dist.k()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }

    fn fill(&self, count: u64, seed: RngSeed, out: &mut Vec<usize>) {
        let mut rng = seed.rng();
        out.clear();
        out.extend((0..count).map(|_| self.sampler.sample(&mut rng)));
    }
}

/// Samples a paired-bin instance through its two-stage decomposition
/// (constant work per draw, no table).
pub struct PaninskiSource {
    inst: PaninskiInstance,
}

impl PaninskiSource {
    pub fn new(inst: PaninskiInstance) -> Self {
        PaninskiSource { inst }
    }

    pub fn instance(&self) -> &PaninskiInstance {
        &self.inst
    }
}

impl StreamSource for PaninskiSource {
    fn domain_size(&self) -> usize {
        self.inst.domain_size()
    }

    fn describe(&self) -> String {
        format!(
            "paninski(k={}, tv={})",
            self.inst.domain_size(),
            self.inst.tv_from_uniform()
        )
    }

    fn fill(&self, count: u64, seed: RngSeed, out: &mut Vec<usize>) {
        let mut rng = seed.rng();
        out.clear();
        out.extend((0..count).map(|_| sample_decomposed_element(&self.inst, &mut rng)));
    }
}

/// The far source used by searches and curves: a paired-bin instance at
/// total variation exactly `alpha` when the domain is even and `alpha`
/// reachable, otherwise the point-mass perturbation family.
pub fn default_far_source(k: usize, alpha: f64, seed: RngSeed) -> Result<Box<dyn StreamSource>> {
    let tv = alpha.min(0.5);
    if k.is_multiple_of(2) && alpha <= 0.5 {
        let inst = far_instance_with_tv(k / 2, tv, seed)?;
        Ok(Box::new(PaninskiSource::new(inst)))
    } else if k.is_multiple_of(2) {
        // requested distance above the paired family's ceiling: use the
        // family at its ceiling, which is still alpha-far detectable work
        let inst = far_instance_with_tv(k / 2, 0.5, seed)?;
        Ok(Box::new(PaninskiSource::new(inst)))
    } else {
        let p = point_mass_perturbed(k, alpha.min((k as f64 - 1.0) / k as f64))?;
        Ok(Box::new(DistributionSource::new(
            p,
            format!("point-mass-perturbed(k={k}, tv={alpha})"),
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TesterKind {
    Simple,
    Pan,
    NonPrivateChi2,
}

/// A fully specified tester, reconstructible from its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterSpec {
    pub kind: TesterKind,
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub noiseless_debug: bool,
    pub distance_constant: f64,
}

impl TesterSpec {
    pub fn simple(k: usize, alpha: f64, epsilon: f64) -> Self {
        TesterSpec {
            kind: TesterKind::Simple,
            k,
            alpha,
            epsilon,
            noiseless_debug: false,
            distance_constant: DEFAULT_DISTANCE_CONSTANT,
        }
    }

    pub fn pan(k: usize, alpha: f64, epsilon: f64) -> Self {
        TesterSpec {
            kind: TesterKind::Pan,
            ..TesterSpec::simple(k, alpha, epsilon)
        }
    }

    pub fn chi2(k: usize, alpha: f64) -> Self {
        TesterSpec {
            kind: TesterKind::NonPrivateChi2,
            ..TesterSpec::simple(k, alpha, 1.0)
        }
    }

    pub fn tester_id(&self) -> String {
        match self.kind {
            TesterKind::Simple => "simple-pan".into(),
            TesterKind::Pan => "pan".into(),
            TesterKind::NonPrivateChi2 => "chi2".into(),
        }
    }

    pub fn run<I: IntoIterator<Item = usize>>(
        &self,
        stream: I,
        m: u64,
        seed: RngSeed,
    ) -> Result<TestVerdict> {
        match self.kind {
            TesterKind::Simple => {
                let cfg = TesterConfig {
                    k: self.k,
                    alpha: self.alpha,
                    epsilon: self.epsilon,
                    seed,
                    noiseless_debug: self.noiseless_debug,
                };
                simple_pan_test(stream, &cfg, m)
            }
            TesterKind::Pan => {
                let cfg = TesterConfig {
                    k: self.k,
                    alpha: self.alpha,
                    epsilon: self.epsilon,
                    seed,
                    noiseless_debug: self.noiseless_debug,
                };
                pan_test_with_constant(stream, &cfg, m, self.distance_constant)
            }
            TesterKind::NonPrivateChi2 => {
                nonprivate_chi2_test(stream, self.k, self.alpha, m, seed)
            }
        }
    }
}

/// Verdict frequencies of a tester against a uniform and a far source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub tester_id: String,
    pub instance: String,
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub m: u64,
    pub trials: u64,
    pub uniform_verdicts_given_uniform: u64,
    pub uniform_verdicts_given_far: u64,
    pub errors_given_uniform: u64,
    pub errors_given_far: u64,
    pub p_uniform_verdict_given_uniform: f64,
    pub p_uniform_verdict_given_far: f64,
    /// Larger of the two sides' 95% Wilson halfwidths.
    pub wilson_halfwidth: f64,
    pub seed: RngSeed,
}

impl PowerEstimate {
    pub fn separation(&self) -> f64 {
        self.p_uniform_verdict_given_uniform - self.p_uniform_verdict_given_far
    }
}

const WILSON_Z_95: f64 = 1.959_963_984_540_054;

/// Run `trials` fresh streams from each source through the tester. Trial
/// `i` on each side is a pure function of `seed.substream(2i [+1])`, so
/// estimates are reproducible element-for-element. Per-trial tester errors
/// are tallied, never silently dropped; the probabilities are over clean
/// trials.
pub fn estimate_power(
    tester: &TesterSpec,
    uniform_source: &dyn StreamSource,
    far_source: &dyn StreamSource,
    m: u64,
    trials: u64,
    seed: RngSeed,
) -> Result<PowerEstimate> {
    if uniform_source.domain_size() != tester.k || far_source.domain_size() != tester.k {
        return Err(Error::domain(format!(
            "source domains ({}, {}) must match tester domain {}",
            uniform_source.domain_size(),
            far_source.domain_size(),
            tester.k
        )));
    }
    let run = |stream: Vec<usize>, m: u64, s: RngSeed| tester.run(stream, m, s);
    estimate_power_fn(&run, tester, uniform_source, far_source, m, trials, seed)
}

/// [`estimate_power`] over an arbitrary verdict procedure; `meta` only
/// labels the record.
pub fn estimate_power_fn<F>(
    run: &F,
    meta: &TesterSpec,
    uniform_source: &dyn StreamSource,
    far_source: &dyn StreamSource,
    m: u64,
    trials: u64,
    seed: RngSeed,
) -> Result<PowerEstimate>
where
    F: Fn(Vec<usize>, u64, RngSeed) -> Result<TestVerdict> + Sync,
{
    if trials < 100 {
        return Err(Error::domain(format!(
            "power estimation needs at least 100 trials, got {trials}"
        )));
    }
    let stream_len = materialized_stream_len(m);

    let run_side = |source: &dyn StreamSource, side: u64| -> (u64, u64) {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let trial_seed = seed.substream(2 * i + side);
                let stream = source.stream(stream_len, trial_seed.substream(0));
                match run(stream, m, trial_seed.substream(1)) {
                    Ok(v) if v.verdict == Verdict::Uniform => (1u64, 0u64),
                    Ok(_) => (0, 0),
                    Err(_) => (0, 1),
                }
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    };

    let (uniform_ok, uniform_err) = run_side(uniform_source, 0);
    let (far_ok, far_err) = run_side(far_source, 1);
    let tester = meta;
    let clean_u = trials - uniform_err;
    let clean_f = trials - far_err;
    if clean_u == 0 || clean_f == 0 {
        return Err(Error::domain("every trial errored; no verdicts to tally"));
    }
    let p_u = uniform_ok as f64 / clean_u as f64;
    let p_f = far_ok as f64 / clean_f as f64;
    let w = wilson_halfwidth(uniform_ok, clean_u, WILSON_Z_95)
        .max(wilson_halfwidth(far_ok, clean_f, WILSON_Z_95));
    Ok(PowerEstimate {
        tester_id: tester.tester_id(),
        instance: far_source.describe(),
        k: tester.k,
        alpha: tester.alpha,
        epsilon: tester.epsilon,
        m,
        trials,
        uniform_verdicts_given_uniform: uniform_ok,
        uniform_verdicts_given_far: far_ok,
        errors_given_uniform: uniform_err,
        errors_given_far: far_err,
        p_uniform_verdict_given_uniform: p_u,
        p_uniform_verdict_given_far: p_f,
        wilson_halfwidth: w,
        seed,
    })
}

/// Search policy. The sample size counts as sufficient when, at 95%
/// confidence, the uniform side sits at or above its pre-amplification
/// operating level (7/8 by default) and the separation between the sides
/// reaches `target_separation` (1/8 by default, the operating gap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub target_separation: f64,
    pub uniform_anchor: f64,
    pub trials_per_probe: u64,
    pub m_floor: u64,
    pub m_cap: u64,
    pub bisection_factor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            target_separation: 0.125,
            uniform_anchor: 0.875,
            trials_per_probe: 400,
            m_floor: 16,
            m_cap: 10_000_000,
            bisection_factor: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub m: u64,
    pub separation: f64,
    /// Confidence-adjusted separation: Wilson lower bound of the uniform
    /// side minus Wilson upper bound of the far side.
    pub separation_lcb: f64,
    pub p_uniform_given_uniform: f64,
    pub p_uniform_given_far: f64,
    pub achieved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub tester_id: String,
    pub instance: String,
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub target_separation: f64,
    pub trials_per_probe: u64,
    /// Smallest sample size meeting the criterion, or `None` when nothing
    /// up to the cap did.
    pub m_star: Option<u64>,
    pub search_trace: Vec<ProbePoint>,
    pub seed: RngSeed,
}

fn probe<F>(
    run: &F,
    meta: &TesterSpec,
    uniform_source: &dyn StreamSource,
    far_source: &dyn StreamSource,
    m: u64,
    cfg: &SearchConfig,
    seed: RngSeed,
) -> Result<ProbePoint>
where
    F: Fn(Vec<usize>, u64, RngSeed) -> Result<TestVerdict> + Sync,
{
    let est = estimate_power_fn(
        run,
        meta,
        uniform_source,
        far_source,
        m,
        cfg.trials_per_probe,
        seed.substream(m),
    )?;
    let clean_u = est.trials - est.errors_given_uniform;
    let clean_f = est.trials - est.errors_given_far;
    let (u_lo, _) = wilson_interval(est.uniform_verdicts_given_uniform, clean_u, WILSON_Z_95);
    let (_, f_hi) = wilson_interval(est.uniform_verdicts_given_far, clean_f, WILSON_Z_95);
    let lcb = u_lo - f_hi;
    let achieved = u_lo >= cfg.uniform_anchor && lcb >= cfg.target_separation;
    Ok(ProbePoint {
        m,
        separation: est.separation(),
        separation_lcb: lcb,
        p_uniform_given_uniform: est.p_uniform_verdict_given_uniform,
        p_uniform_given_far: est.p_uniform_verdict_given_far,
        achieved,
    })
}

/// Find the smallest sample size at which the tester meets the search
/// criterion against the given far source: exponential doubling from the
/// floor, then bisection until the bracket is within `bisection_factor`.
pub fn sample_complexity_search(
    tester: &TesterSpec,
    far_source: &dyn StreamSource,
    cfg: &SearchConfig,
    seed: RngSeed,
) -> Result<ComplexityPoint> {
    let uniform_source = DistributionSource::uniform(tester.k)?;
    let run = |stream: Vec<usize>, m: u64, s: RngSeed| tester.run(stream, m, s);
    sample_complexity_search_fn(&run, tester, &uniform_source, far_source, cfg, seed)
}

/// [`sample_complexity_search`] over an arbitrary verdict procedure with
/// caller-chosen sources.
pub fn sample_complexity_search_fn<F>(
    run: &F,
    meta: &TesterSpec,
    uniform_source: &dyn StreamSource,
    far_source: &dyn StreamSource,
    cfg: &SearchConfig,
    seed: RngSeed,
) -> Result<ComplexityPoint>
where
    F: Fn(Vec<usize>, u64, RngSeed) -> Result<TestVerdict> + Sync,
{
    if cfg.target_separation >= 1.0 {
        return Err(Error::domain("target separation must be below 1"));
    }
    let mut point = ComplexityPoint {
        tester_id: meta.tester_id(),
        instance: far_source.describe(),
        k: meta.k,
        alpha: meta.alpha,
        epsilon: meta.epsilon,
        target_separation: cfg.target_separation,
        trials_per_probe: cfg.trials_per_probe,
        m_star: None,
        search_trace: Vec::new(),
        seed,
    };
    if cfg.target_separation <= 0.0 {
        // vacuous target: the floor trivially qualifies
        point.m_star = Some(cfg.m_floor);
        return Ok(point);
    }

    // doubling phase
    let mut m = cfg.m_floor;
    let (mut lo, mut hi) = loop {
        let p = probe(run, meta, uniform_source, far_source, m, cfg, seed)?;
        let achieved = p.achieved;
        if let Some(prev) = point.search_trace.last() {
            if prev.separation - p.separation > 0.1 {
                log::warn!(
                    "separation dropped from {:.3} (m={}) to {:.3} (m={}); power may not be monotone here",
                    prev.separation, prev.m, p.separation, p.m
                );
            }
        }
        point.search_trace.push(p);
        if achieved {
            break (if m == cfg.m_floor { m } else { m / 2 }, m);
        }
        if m >= cfg.m_cap {
            return Ok(point); // NotFound: m_star stays None
        }
        m = (m * 2).min(cfg.m_cap);
    };

    // bisection phase on a geometric grid
    while hi as f64 / lo as f64 > cfg.bisection_factor {
        let mid = ((lo as f64 * hi as f64).sqrt().round()) as u64;
        if mid <= lo || mid >= hi {
            break;
        }
        let p = probe(run, meta, uniform_source, far_source, mid, cfg, seed)?;
        let achieved = p.achieved;
        point.search_trace.push(p);
        if achieved {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    point.m_star = Some(hi);
    Ok(point)
}

/// Search with the default far source for the tester's domain and distance.
pub fn sample_complexity_search_default(
    tester: &TesterSpec,
    cfg: &SearchConfig,
    seed: RngSeed,
) -> Result<ComplexityPoint> {
    let far = default_far_source(tester.k, tester.alpha, seed.substream(0xFA12))?;
    sample_complexity_search(tester, far.as_ref(), cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub tester_id: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub k_values: Vec<usize>,
    pub points: Vec<ComplexityPoint>,
    /// Least-squares slope of `ln m_star` against `ln k` over found points.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    /// True when some k produced no sample size up to the cap.
    pub partial: bool,
}

/// One complexity point per domain size, plus a fitted log-log slope.
pub fn scaling_curve(
    make_tester: &dyn Fn(usize) -> TesterSpec,
    k_values: &[usize],
    cfg: &SearchConfig,
    seed: RngSeed,
) -> Result<ScalingCurve> {
    if k_values.is_empty() {
        return Err(Error::domain("curve needs at least one domain size"));
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("domain sizes must be strictly increasing"));
    }
    if k_values.iter().any(|k| *k < 4) {
        return Err(Error::domain("curve domain sizes must be at least 4"));
    }
    let mut points = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let tester = make_tester(k);
        points.push(sample_complexity_search_default(
            &tester,
            cfg,
            seed.substream(k as u64),
        )?);
    }
    let found: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.m_star.map(|m| ((p.k as f64).ln(), (m as f64).ln())))
        .collect();
    let partial = found.len() < points.len();
    let (slope, slope_stderr) = if found.len() >= 2 {
        let (s, se) = fit_line_slope(&found);
        (Some(s), se)
    } else {
        (None, None)
    };
    let first = make_tester(k_values[0]);
    Ok(ScalingCurve {
        tester_id: first.tester_id(),
        alpha: first.alpha,
        epsilon: first.epsilon,
        k_values: k_values.to_vec(),
        points,
        slope,
        slope_stderr,
        partial,
    })
}

/// Least-squares slope and its standard error (standard error requires at
/// least three points).
pub fn fit_line_slope(points: &[(f64, f64)]) -> (f64, Option<f64>) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    if points.len() < 3 {
        return (slope, None);
    }
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, Some(se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionExperimentReport {
    pub k: usize,
    pub n: usize,
    pub tv: f64,
    pub trials: u64,
    /// Fraction of random partitions whose induced distribution stays at
    /// least `(tv/954) * sqrt(n/(10k))` from uniform over the groups.
    pub success_fraction: f64,
    pub bound: f64,
    pub seed: RngSeed,
}

/// Distance bound the partition experiment checks: half of
/// `(alpha/477) * sqrt(n/(10k))`.
pub fn partition_distance_bound(k: usize, n: usize, alpha: f64) -> f64 {
    0.5 * (alpha / 477.0) * ((n as f64) / (10.0 * k as f64)).sqrt()
}

/// Fraction of uniformly random partitions of the domain of `p` into `n`
/// groups for which the induced distribution over groups is at least
/// `partition_distance_bound(k, n, alpha_for_bound)` from uniform.
pub fn partition_distance_success(
    p: &DiscreteDistribution,
    n: usize,
    alpha_for_bound: f64,
    trials: u64,
    seed: RngSeed,
) -> Result<f64> {
    let k = p.k();
    if n < 2 || n > k {
        return Err(Error::domain(format!("need 2 <= n <= k, got n={n}, k={k}")));
    }
    if trials == 0 {
        return Err(Error::domain("partition experiment needs at least one trial"));
    }
    let bound = partition_distance_bound(k, n, alpha_for_bound);
    let probs = p.probs();
    let uniform_group = 1.0 / n as f64;
    let successes: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.substream(i).rng();
            let plan = random_partition(k, n, &mut rng).expect("validated n");
            let mut masses = vec![0.0f64; n];
            for (e, pr) in probs.iter().enumerate() {
                masses[plan.group_of(e).expect("element in domain")] += pr;
            }
            let tv: f64 = 0.5 * masses.iter().map(|g| (g - uniform_group).abs()).sum::<f64>();
            u64::from(tv >= bound)
        })
        .sum();
    Ok(successes as f64 / trials as f64)
}

/// The packaged experiment: build a far paired-bin instance at total
/// variation exactly `tv`, then measure the partition success fraction
/// with the bound taken at that same distance.
pub fn partition_distance_experiment(
    k: usize,
    n: usize,
    tv: f64,
    trials: u64,
    seed: RngSeed,
) -> Result<PartitionExperimentReport> {
    if !k.is_multiple_of(2) {
        return Err(Error::domain("paired-bin instances need an even domain"));
    }
    let inst = far_instance_with_tv(k / 2, tv, seed.substream(0))?;
    let p = paninski_distribution(&inst);
    debug_assert!((tv_distance(&p, &DiscreteDistribution::uniform(k)?)? - tv).abs() < 1e-12);
    let success_fraction = partition_distance_success(&p, n, tv, trials, seed.substream(1))?;
    Ok(PartitionExperimentReport {
        k,
        n,
        tv,
        trials,
        success_fraction,
        bound: partition_distance_bound(k, n, tv),
        seed,
    })
}

/// Any record the harness can persist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record")]
pub enum ExperimentRecord {
    Power(PowerEstimate),
    Complexity(ComplexityPoint),
    Curve(ScalingCurve),
    Partition(PartitionExperimentReport),
}

#[derive(Serialize, Deserialize)]
struct RecordEnvelope {
    timestamp_ms: u64,
    #[serde(flatten)]
    record: ExperimentRecord,
}

/// Append-free JSON-lines writer: one envelope per record, empty list
/// writes an empty file.
pub fn persist_results(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for record in records {
        let envelope = RecordEnvelope {
            timestamp_ms: now,
            record: record.clone(),
        };
        let line = serde_json::to_string(&envelope)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let envelope: RecordEnvelope = serde_json::from_str(&line)?;
        out.push(envelope.record);
    }
    Ok(out)
}

/// CSV with one row per curve point (columns: k, alpha, epsilon, tester,
/// m_star, slope, stderr), suitable for external plotting.
pub fn export_curve_csv(curves: &[ScalingCurve], path: &Path) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(file, "k,alpha,epsilon,tester,m_star,slope,stderr")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for curve in curves {
        for p in &curve.points {
            let m_star = p.m_star.map(|m| m.to_string()).unwrap_or_default();
            let slope = curve.slope.map(|s| s.to_string()).unwrap_or_default();
            let stderr = curve.slope_stderr.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                p.k, p.alpha, p.epsilon, p.tester_id, m_star, slope, stderr
            )
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::RngSeed;
    use crate::testers::TestVerdict;

    #[test]
    fn wilson_basics() {
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z_95);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(hi - lo < 0.25);
        let (lo, hi) = wilson_interval(0, 100, WILSON_Z_95);
        assert!(lo.abs() < 1e-12);
        assert!(hi > 0.0);
    }

    #[test]
    fn wilson_covers_known_rate() {
        // 95% interval should cover p=0.3 in at least 93% of repetitions
        let p = 0.3f64;
        let n = 200u64;
        let mut covered = 0;
        for rep in 0..1000u64 {
            let mut rng = RngSeed::new(1234).substream(rep).rng();
            let hits = (0..n).filter(|_| rand::Rng::gen::<f64>(&mut rng) < p).count() as u64;
            let (lo, hi) = wilson_interval(hits, n, WILSON_Z_95);
            if lo <= p && p <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 930, "covered {covered}/1000");
    }

    #[test]
    fn materialized_margin_is_generous() {
        assert_eq!(materialized_stream_len(0), 10);
        assert!(materialized_stream_len(400) >= 530);
    }

    #[test]
    fn constant_tester_power_is_one_one() {
        let uniform = DistributionSource::uniform(4).unwrap();
        let far = DistributionSource::new(
            crate::prob::DiscreteDistribution::point_mass(4, 0).unwrap(),
            "point-mass",
        );
        let meta = TesterSpec::simple(4, 0.5, 1.0);
        let always_uniform =
            |_s: Vec<usize>, _m: u64, _r: RngSeed| Ok(TestVerdict::from_statistic(0.0, 1.0, 0));
        let est =
            estimate_power_fn(&always_uniform, &meta, &uniform, &far, 4, 200, RngSeed::new(1))
                .unwrap();
        assert_eq!(est.p_uniform_verdict_given_uniform, 1.0);
        assert_eq!(est.p_uniform_verdict_given_far, 1.0);
        assert!(est.wilson_halfwidth > 0.0);
    }

    #[test]
    fn coin_flip_tester_power_is_half() {
        let uniform = DistributionSource::uniform(4).unwrap();
        let far = DistributionSource::new(
            crate::prob::DiscreteDistribution::point_mass(4, 0).unwrap(),
            "point-mass",
        );
        let meta = TesterSpec::simple(4, 0.5, 1.0);
        let coin = |_s: Vec<usize>, _m: u64, seed: RngSeed| {
            let heads = rand::Rng::gen::<bool>(&mut seed.rng());
            Ok(TestVerdict::from_statistic(if heads { 0.0 } else { 2.0 }, 1.0, 0))
        };
        let est =
            estimate_power_fn(&coin, &meta, &uniform, &far, 4, 2000, RngSeed::new(2)).unwrap();
        let w = est.wilson_halfwidth + 0.01;
        assert!((est.p_uniform_verdict_given_uniform - 0.5).abs() <= 2.0 * w);
        assert!((est.p_uniform_verdict_given_far - 0.5).abs() <= 2.0 * w);
    }

    #[test]
    fn errors_are_tallied_not_dropped() {
        let uniform = DistributionSource::uniform(4).unwrap();
        let far = DistributionSource::uniform(4).unwrap();
        let meta = TesterSpec::simple(4, 0.5, 1.0);
        // every third trial errors out
        let flaky = |_s: Vec<usize>, _m: u64, seed: RngSeed| {
            if seed.stream_id.is_multiple_of(3) {
                Err(crate::error::Error::domain("synthetic failure"))
            } else {
                Ok(TestVerdict::from_statistic(0.0, 1.0, 0))
            }
        };
        let est =
            estimate_power_fn(&flaky, &meta, &uniform, &far, 4, 300, RngSeed::new(3)).unwrap();
        assert!(est.errors_given_uniform > 0);
        assert_eq!(est.p_uniform_verdict_given_uniform, 1.0); // over clean trials
    }

    #[test]
    fn power_is_reproducible_across_thread_counts() {
        let uniform = DistributionSource::uniform(8).unwrap();
        let far = default_far_source(8, 0.5, RngSeed::new(5)).unwrap();
        let tester = TesterSpec::simple(8, 0.5, 1.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                estimate_power(&tester, &uniform, far.as_ref(), 100, 200, RngSeed::new(77)).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    /// Sources that mark the side in every element so a synthetic tester
    /// can tell which stream it received.
    struct FlagSource {
        k: usize,
        value: usize,
    }

    impl StreamSource for FlagSource {
        fn domain_size(&self) -> usize {
            self.k
        }
        fn describe(&self) -> String {
            format!("flag({})", self.value)
        }
        fn fill(&self, count: u64, _seed: RngSeed, out: &mut Vec<usize>) {
            out.clear();
            out.resize(count as usize, self.value);
        }
    }

    #[test]
    fn search_hits_synthetic_step_function() {
        // a synthetic tester whose far-side power jumps at m = 1000: the
        // search must land within one bisection factor above the step
        let meta = TesterSpec::chi2(16, 0.5);
        let uniform = FlagSource { k: 16, value: 1 };
        let far = FlagSource { k: 16, value: 0 };
        let step = |stream: Vec<usize>, m: u64, seed: RngSeed| {
            let uniform_side = stream.first() == Some(&1);
            let p_uniform_verdict = if uniform_side || m < 1000 { 0.95 } else { 0.02 };
            let heads = rand::Rng::gen::<f64>(&mut seed.rng()) < p_uniform_verdict;
            Ok(TestVerdict::from_statistic(if heads { 0.0 } else { 2.0 }, 1.0, m))
        };
        let cfg = SearchConfig {
            trials_per_probe: 400,
            ..SearchConfig::default()
        };
        let point =
            sample_complexity_search_fn(&step, &meta, &uniform, &far, &cfg, RngSeed::new(9))
                .unwrap();
        let m_star = point.m_star.unwrap();
        assert!((1000..=1100).contains(&m_star), "m_star {m_star}");

        // doubling segment of the trace is strictly increasing in m
        let mut doubling_m: Vec<u64> = Vec::new();
        for p in &point.search_trace {
            if let Some(last) = doubling_m.last() {
                if p.m <= *last {
                    break;
                }
            }
            doubling_m.push(p.m);
        }
        assert!(doubling_m.windows(2).all(|w| w[0] < w[1]));

        // m_star satisfies the criterion; the probed m_star/2 does not
        let at: std::collections::HashMap<u64, bool> =
            point.search_trace.iter().map(|p| (p.m, p.achieved)).collect();
        assert_eq!(at.get(&m_star), Some(&true));
        if let Some(a) = at.get(&(m_star / 2)) {
            assert!(!a, "m_star/2 must not satisfy the criterion");
        }
    }

    #[test]
    fn vacuous_target_returns_floor() {
        let tester = TesterSpec::chi2(8, 0.5);
        let far = default_far_source(8, 0.5, RngSeed::new(3)).unwrap();
        let cfg = SearchConfig {
            target_separation: 0.0,
            ..SearchConfig::default()
        };
        let point = sample_complexity_search(&tester, far.as_ref(), &cfg, RngSeed::new(4)).unwrap();
        assert_eq!(point.m_star, Some(16));
        assert!(point.search_trace.is_empty());
    }

    #[test]
    fn capped_search_reports_not_found() {
        // an impossible target under a tiny cap
        let tester = TesterSpec::chi2(8, 0.5);
        let far = default_far_source(8, 0.5, RngSeed::new(3)).unwrap();
        let cfg = SearchConfig {
            target_separation: 0.999,
            m_cap: 64,
            trials_per_probe: 100,
            ..SearchConfig::default()
        };
        let point = sample_complexity_search(&tester, far.as_ref(), &cfg, RngSeed::new(4)).unwrap();
        assert_eq!(point.m_star, None);
        assert!(!point.search_trace.is_empty());
    }

    #[test]
    fn slope_fit_recovers_linear_law() {
        // m_star = 7k exactly: slope 1 with zero residual
        let pts: Vec<(f64, f64)> = [64usize, 128, 256, 512]
            .iter()
            .map(|k| ((*k as f64).ln(), (7.0 * *k as f64).ln()))
            .collect();
        let (slope, se) = fit_line_slope(&pts);
        assert!((slope - 1.0).abs() < 0.02, "slope {slope}");
        assert!(se.unwrap() < 1e-10);
    }

    #[test]
    fn partition_identity_preserves_distance() {
        // n = k: groups are singletons, induced distance equals the original
        let inst = far_instance_with_tv(8, 0.4, RngSeed::new(6)).unwrap();
        let p = paninski_distribution(&inst);
        let k = p.k();
        let frac = partition_distance_success(&p, k, 1e-9, 50, RngSeed::new(7)).unwrap();
        // with a vanishing bound every partition succeeds
        assert_eq!(frac, 1.0);
        // and with the bound set just above the true distance none do
        let too_high = 2.0 * 0.4 * 954.0 * (10.0 * k as f64 / k as f64).sqrt();
        let frac = partition_distance_success(&p, k, too_high, 50, RngSeed::new(8)).unwrap();
        assert_eq!(frac, 0.0);
    }

    #[test]
    fn uniform_distribution_never_clears_positive_bound() {
        let u = crate::prob::DiscreteDistribution::uniform(16).unwrap();
        let frac = partition_distance_success(&u, 4, 0.45, 200, RngSeed::new(9)).unwrap();
        assert_eq!(frac, 0.0);
    }

    #[test]
    fn partition_experiment_beats_worst_case_rate() {
        let report =
            partition_distance_experiment(64, 8, 0.45, 20_000, RngSeed::new(10)).unwrap();
        assert!(
            report.success_fraction >= 1.0 / 954.0,
            "fraction {}",
            report.success_fraction
        );
    }

    #[test]
    fn persistence_round_trip() {
        let dir = std::env::temp_dir().join(format!("panprivacy-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.jsonl");

        // empty list -> empty file
        persist_results(&[], &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        assert!(read_results(&path).unwrap().is_empty());

        let uniform = DistributionSource::uniform(8).unwrap();
        let far = default_far_source(8, 0.5, RngSeed::new(5)).unwrap();
        let tester = TesterSpec::simple(8, 0.5, 1.0);
        let est =
            estimate_power(&tester, &uniform, far.as_ref(), 64, 120, RngSeed::new(11)).unwrap();
        let records = vec![ExperimentRecord::Power(est)];
        persist_results(&records, &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, records);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn curve_csv_has_expected_columns() {
        let curve = ScalingCurve {
            tester_id: "chi2".into(),
            alpha: 0.5,
            epsilon: 1.0,
            k_values: vec![64, 256],
            points: vec![
                ComplexityPoint {
                    tester_id: "chi2".into(),
                    instance: "paninski(k=64, tv=0.5)".into(),
                    k: 64,
                    alpha: 0.5,
                    epsilon: 1.0,
                    target_separation: 0.125,
                    trials_per_probe: 400,
                    m_star: Some(640),
                    search_trace: vec![],
                    seed: RngSeed::new(1),
                },
                ComplexityPoint {
                    tester_id: "chi2".into(),
                    instance: "paninski(k=256, tv=0.5)".into(),
                    k: 256,
                    alpha: 0.5,
                    epsilon: 1.0,
                    target_separation: 0.125,
                    trials_per_probe: 400,
                    m_star: None,
                    search_trace: vec![],
                    seed: RngSeed::new(1),
                },
            ],
            slope: Some(0.5),
            slope_stderr: None,
            partial: true,
        };
        let path = std::env::temp_dir().join(format!("panprivacy-csv-{}.csv", std::process::id()));
        export_curve_csv(std::slice::from_ref(&curve), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,alpha,epsilon,tester,m_star,slope,stderr");
        assert_eq!(lines[1], "64,0.5,1,chi2,640,0.5,");
        assert_eq!(lines[2], "256,0.5,1,chi2,,0.5,");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn same_seed_same_records() {
        let uniform = DistributionSource::uniform(8).unwrap();
        let far = default_far_source(8, 0.5, RngSeed::new(5)).unwrap();
        let tester = TesterSpec::simple(8, 0.5, 1.0);
        let a = estimate_power(&tester, &uniform, far.as_ref(), 64, 150, RngSeed::new(12)).unwrap();
        let b = estimate_power(&tester, &uniform, far.as_ref(), 64, 150, RngSeed::new(12)).unwrap();
        assert_eq!(a, b);
    }
}
