//! pantest: run pan-private uniformity tests, power and sample-complexity
//! experiments, privacy audits, and protocol-transform demos.
//!
//! Exit codes: 0 success, 1 audit failure, 2 configuration error,
//! 3 input-data error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;

use config::{resolve, resolve_required, FileConfig};
use panprivacy::audit::{
    default_bin_width, empirical_epsilon, laplace_state_ratio_bound, simple_pan_state_mechanism,
    AuditConfig, AuditVerdict, NeighborPair,
};
use panprivacy::bridge::{
    empirical_distribution, exact_state_distribution, exact_transcript_distribution, pan_to_local,
    simulate, simulate_local, toy_counter, toy_local_adaptive, toy_randomized_response,
    tv_between_maps, two_intrusion_to_one, local_to_pan, PanProtocol,
};
use panprivacy::error::Error;
use panprivacy::experiments::{
    estimate_power, export_curve_csv, materialized_stream_len, partition_distance_experiment,
    persist_results, sample_complexity_search, scaling_curve, DistributionSource,
    ExperimentRecord, PaninskiSource, SearchConfig, StreamSource, TesterKind, TesterSpec,
};
use panprivacy::instances::{far_instance_with_tv, point_mass_perturbed};
use panprivacy::prob::{DiscreteDistribution, RngSeed};
use panprivacy::testers::DEFAULT_DISTANCE_CONSTANT;

#[derive(Parser)]
#[command(name = "pantest", version, about = "Pan-private uniformity testing toolkit")]
struct Cli {
    /// Key=value config file; command-line flags override file keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed. When omitted, a seed is drawn from system entropy and
    /// printed to stderr so the run can be reproduced.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads. `--threads 1` reproduces the numeric output
    /// of parallel runs exactly.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TesterArg {
    Simple,
    Pan,
    Chi2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InstanceArg {
    /// Deterministic round-robin stream (exactly m/k of each element).
    ExactUniform,
    Uniform,
    PaninskiFar,
    PointMass,
    /// Mass moved onto one element, taken evenly from the others.
    Perturbed,
    /// Whitespace-separated elements read from --stream-file.
    File,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    RandomizedResponse,
    TesterState,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Counter,
    RandomizedResponse,
    Adaptive,
}

#[derive(Subcommand)]
enum Command {
    /// Run one uniformity test and print the verdict as JSON.
    Test {
        #[arg(long, value_enum)]
        tester: Option<TesterArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        m: Option<u64>,
        /// Disable noise and Poissonization (debug arithmetic only).
        #[arg(long)]
        noiseless: bool,
        #[arg(long, value_enum)]
        instance: Option<InstanceArg>,
        /// Total variation distance of the far instance from uniform.
        #[arg(long)]
        tv: Option<f64>,
        /// Element carrying the point mass.
        #[arg(long)]
        element: Option<usize>,
        #[arg(long)]
        stream_file: Option<PathBuf>,
    },
    /// Estimate verdict probabilities against uniform and far sources.
    Power {
        #[arg(long, value_enum)]
        tester: Option<TesterArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        m: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, value_enum)]
        instance: Option<InstanceArg>,
        #[arg(long)]
        tv: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the smallest sufficient sample size.
    Complexity {
        #[arg(long, value_enum)]
        tester: Option<TesterArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        target_separation: Option<f64>,
        #[arg(long)]
        trials_per_probe: Option<u64>,
        #[arg(long)]
        m_cap: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample-complexity scaling curve over a grid of domain sizes.
    Curve {
        #[arg(long, value_enum)]
        tester: Option<TesterArg>,
        /// Comma-separated domain sizes, e.g. 64,256,1024.
        #[arg(long)]
        k_values: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        target_separation: Option<f64>,
        #[arg(long)]
        trials_per_probe: Option<u64>,
        #[arg(long)]
        m_cap: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measure how often a random partition preserves testing distance.
    PartitionExp {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tv: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a mechanism's privacy claim.
    Audit {
        #[arg(long, value_enum)]
        mechanism: Option<MechanismArg>,
        #[arg(long)]
        claimed_epsilon: Option<f64>,
        /// Privacy parameter the mechanism actually runs with.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Intrusion time for the tester-state mechanism.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        noiseless: bool,
    },
    /// Compare transformed-protocol transcripts against source states.
    BridgeDemo {
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        t_max: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let file = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => FileConfig::default(),
    };

    let seed_value = match resolve_seed(cli.seed, &file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run(&cli.command, &file, seed_value) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> panprivacy::Result<u64> {
    if let Some(s) = flag {
        let _ = file.raw("seed");
        return Ok(s);
    }
    if let Some(s) = file.get::<u64>("seed")? {
        return Ok(s);
    }
    let s: u64 = rand::thread_rng().gen();
    eprintln!("seed: {s}");
    Ok(s)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Domain(_) | Error::Contract(_) | Error::AuditRejected(_) => 2,
        Error::StreamExhausted { .. } => 3,
        Error::Io { .. } | Error::Serde(_) => 3,
    }
}

/// Six significant digits for human-facing numbers.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-3..9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn tester_spec(arg: TesterArg, k: usize, alpha: f64, epsilon: f64, noiseless: bool) -> TesterSpec {
    let kind = match arg {
        TesterArg::Simple => TesterKind::Simple,
        TesterArg::Pan => TesterKind::Pan,
        TesterArg::Chi2 => TesterKind::NonPrivateChi2,
    };
    TesterSpec {
        kind,
        k,
        alpha,
        epsilon,
        noiseless_debug: noiseless,
        distance_constant: DEFAULT_DISTANCE_CONSTANT,
    }
}

fn far_source_for(
    instance: InstanceArg,
    k: usize,
    tv: f64,
    element: usize,
    seed: RngSeed,
) -> panprivacy::Result<Box<dyn StreamSource>> {
    match instance {
        InstanceArg::PaninskiFar => {
            if !k.is_multiple_of(2) {
                return Err(Error::domain("paninski-far needs an even domain size"));
            }
            let inst = far_instance_with_tv(k / 2, tv, seed)?;
            Ok(Box::new(PaninskiSource::new(inst)))
        }
        InstanceArg::PointMass => Ok(Box::new(DistributionSource::new(
            DiscreteDistribution::point_mass(k, element)?,
            format!("point-mass(k={k}, at={element})"),
        ))),
        InstanceArg::Perturbed => Ok(Box::new(DistributionSource::new(
            point_mass_perturbed(k, tv)?,
            format!("point-mass-perturbed(k={k}, tv={tv})"),
        ))),
        InstanceArg::Uniform => Ok(Box::new(DistributionSource::uniform(k)?)),
        _ => Err(Error::domain("this instance kind is not a sampling source")),
    }
}


fn parse_instance(
    file: &FileConfig,
    flag: Option<InstanceArg>,
    default: InstanceArg,
) -> panprivacy::Result<InstanceArg> {
    if let Some(i) = flag {
        let _ = file.raw("instance");
        return Ok(i);
    }
    match file.raw("instance") {
        None => Ok(default),
        Some("exact-uniform") => Ok(InstanceArg::ExactUniform),
        Some("uniform") => Ok(InstanceArg::Uniform),
        Some("paninski-far") => Ok(InstanceArg::PaninskiFar),
        Some("point-mass") => Ok(InstanceArg::PointMass),
        Some("perturbed") => Ok(InstanceArg::Perturbed),
        Some("file") => Ok(InstanceArg::File),
        Some(other) => Err(Error::domain(format!("unknown instance {other:?}"))),
    }
}

fn parse_tester(file: &FileConfig, flag: Option<TesterArg>) -> panprivacy::Result<TesterArg> {
    if let Some(t) = flag {
        let _ = file.raw("tester");
        return Ok(t);
    }
    match file.raw("tester") {
        None => Ok(TesterArg::Simple),
        Some("simple") => Ok(TesterArg::Simple),
        Some("pan") => Ok(TesterArg::Pan),
        Some("chi2") => Ok(TesterArg::Chi2),
        Some(other) => Err(Error::domain(format!("unknown tester {other:?}"))),
    }
}

fn run(command: &Command, file: &FileConfig, seed_value: u64) -> panprivacy::Result<u8> {
    let seed = RngSeed::new(seed_value);
    match command {
        Command::Test {
            tester,
            k,
            alpha,
            epsilon,
            m,
            noiseless,
            instance,
            tv,
            element,
            stream_file,
        } => {
            let tester_arg = parse_tester(file, *tester)?;
            let k = resolve_required(*k, file, "k")?;
            let alpha = resolve(*alpha, file, "alpha", 0.5)?;
            let epsilon = resolve(*epsilon, file, "epsilon", 1.0)?;
            let m: u64 = resolve_required(*m, file, "m")?;
            let noiseless = *noiseless || file.get::<bool>("noiseless")?.unwrap_or(false);
            let tv = resolve(*tv, file, "tv", alpha.min(0.5))?;
            let element = resolve(*element, file, "element", 0)?;
            let instance = parse_instance(file, *instance, InstanceArg::Uniform)?;
            file.reject_unknown()?;

            let spec = tester_spec(tester_arg, k, alpha, epsilon, noiseless);
            let needed = materialized_stream_len(m);
            let verdict = match instance {
                InstanceArg::ExactUniform => {
                    let stream = (0..needed as usize).map(|t| t % k);
                    spec.run(stream, m, seed.substream(1))?
                }
                InstanceArg::File => {
                    let path = stream_file
                        .clone()
                        .map(Ok)
                        .or_else(|| file.raw("stream_file").map(|s| Ok(PathBuf::from(s))))
                        .unwrap_or_else(|| {
                            Err(Error::domain("instance=file needs --stream-file"))
                        })?;
                    let stream = read_stream_file(&path, k)?;
                    spec.run(stream, m, seed.substream(1))?
                }
                other => {
                    let source = far_source_for(other, k, tv, element, seed.substream(0))?;
                    spec.run(source.stream(needed, seed.substream(2)), m, seed.substream(1))?
                }
            };

            let json = serde_json::json!({
                "verdict": verdict.verdict,
                "statistic": verdict.statistic,
                "threshold": verdict.threshold,
                "samples_consumed": verdict.samples_consumed,
                "seed": seed_value,
            });
            println!("{json}");
            Ok(0)
        }

        Command::Power {
            tester,
            k,
            alpha,
            epsilon,
            m,
            trials,
            instance,
            tv,
            out,
        } => {
            let tester_arg = parse_tester(file, *tester)?;
            let k = resolve_required(*k, file, "k")?;
            let alpha = resolve(*alpha, file, "alpha", 0.5)?;
            let epsilon = resolve(*epsilon, file, "epsilon", 1.0)?;
            let m: u64 = resolve_required(*m, file, "m")?;
            let trials = resolve(*trials, file, "trials", 1000)?;
            let tv = resolve(*tv, file, "tv", alpha.min(0.5))?;
            let instance = parse_instance(file, *instance, InstanceArg::PaninskiFar)?;
            let out = resolve_out(out, file)?;
            file.reject_unknown()?;

            let spec = tester_spec(tester_arg, k, alpha, epsilon, false);
            let uniform = DistributionSource::uniform(k)?;
            let far = far_source_for(instance, k, tv, 0, seed.substream(0))?;
            let est = estimate_power(&spec, &uniform, far.as_ref(), m, trials, seed)?;

            println!(
                "tester={} k={k} m={m} trials={trials}: p[uniform|uniform]={} p[uniform|far]={} separation={} (±{})",
                est.tester_id,
                sig6(est.p_uniform_verdict_given_uniform),
                sig6(est.p_uniform_verdict_given_far),
                sig6(est.separation()),
                sig6(est.wilson_halfwidth),
            );
            if let Some(path) = out {
                persist_results(&[ExperimentRecord::Power(est)], &path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }

        Command::Complexity {
            tester,
            k,
            alpha,
            epsilon,
            target_separation,
            trials_per_probe,
            m_cap,
            out,
        } => {
            let tester_arg = parse_tester(file, *tester)?;
            let k = resolve_required(*k, file, "k")?;
            let alpha = resolve(*alpha, file, "alpha", 0.5)?;
            let epsilon = resolve(*epsilon, file, "epsilon", 1.0)?;
            let search = search_config(target_separation, trials_per_probe, m_cap, file)?;
            let out = resolve_out(out, file)?;
            file.reject_unknown()?;

            let spec = tester_spec(tester_arg, k, alpha, epsilon, false);
            let far = panprivacy::experiments::default_far_source(k, alpha, seed.substream(0xFA12))?;
            let point = sample_complexity_search(&spec, far.as_ref(), &search, seed)?;

            for probe in &point.search_trace {
                println!(
                    "m={:<9} separation={} (lcb {}) p[u|u]={} p[u|far]={} {}",
                    probe.m,
                    sig6(probe.separation),
                    sig6(probe.separation_lcb),
                    sig6(probe.p_uniform_given_uniform),
                    sig6(probe.p_uniform_given_far),
                    if probe.achieved { "achieved" } else { "" },
                );
            }
            match point.m_star {
                Some(m) => println!("m_star = {m}"),
                None => println!("m_star = NotFound (no m <= {} sufficed)", search.m_cap),
            }
            if let Some(path) = out {
                persist_results(&[ExperimentRecord::Complexity(point)], &path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }

        Command::Curve {
            tester,
            k_values,
            alpha,
            epsilon,
            target_separation,
            trials_per_probe,
            m_cap,
            out,
            csv,
        } => {
            let tester_arg = parse_tester(file, *tester)?;
            let k_values = parse_k_values(k_values.as_deref(), file)?;
            let alpha = resolve(*alpha, file, "alpha", 0.5)?;
            let epsilon = resolve(*epsilon, file, "epsilon", 1.0)?;
            let search = search_config(target_separation, trials_per_probe, m_cap, file)?;
            let out = resolve_out(out, file)?;
            let csv = match csv {
                Some(p) => {
                    let _ = file.raw("csv");
                    Some(p.clone())
                }
                None => file.raw("csv").map(PathBuf::from),
            };
            file.reject_unknown()?;

            let curve = scaling_curve(
                &|k| tester_spec(tester_arg, k, alpha, epsilon, false),
                &k_values,
                &search,
                seed,
            )?;

            println!("tester={} alpha={} epsilon={}", curve.tester_id, sig6(alpha), sig6(epsilon));
            for p in &curve.points {
                match p.m_star {
                    Some(m) => println!("k={:<6} m_star={m}", p.k),
                    None => println!("k={:<6} m_star=NotFound", p.k),
                }
            }
            match (curve.slope, curve.slope_stderr) {
                (Some(s), Some(se)) => println!("log-log slope = {} (stderr {})", sig6(s), sig6(se)),
                (Some(s), None) => println!("log-log slope = {}", sig6(s)),
                _ => println!("log-log slope = undefined (too few points)"),
            }
            if curve.partial {
                println!("curve is partial: some points hit the sample-size cap");
            }
            if let Some(path) = out {
                persist_results(&[ExperimentRecord::Curve(curve.clone())], &path)?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = csv {
                export_curve_csv(std::slice::from_ref(&curve), &path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }

        Command::PartitionExp { k, n, tv, trials, out } => {
            let k = resolve_required(*k, file, "k")?;
            let n = resolve_required(*n, file, "n")?;
            let tv = resolve(*tv, file, "tv", 0.45)?;
            let trials = resolve(*trials, file, "trials", 100_000)?;
            let out = resolve_out(out, file)?;
            file.reject_unknown()?;

            let report = partition_distance_experiment(k, n, tv, trials, seed)?;
            println!("{}", serde_json::to_string(&report)?);
            if let Some(path) = out {
                persist_results(&[ExperimentRecord::Partition(report)], &path)?;
            }
            Ok(0)
        }

        Command::Audit {
            mechanism,
            claimed_epsilon,
            epsilon,
            trials,
            confidence,
            k,
            t,
            noiseless,
        } => {
            let mechanism = mechanism.unwrap_or(MechanismArg::RandomizedResponse);
            let claimed: f64 = resolve_required(*claimed_epsilon, file, "claimed_epsilon")?;
            let epsilon = resolve(*epsilon, file, "epsilon", claimed)?;
            let trials = resolve(*trials, file, "trials", 100_000)?;
            let confidence = resolve(*confidence, file, "confidence", 0.95)?;
            let k = resolve(*k, file, "k", 4)?;
            let t = resolve(*t, file, "t", 4)?;
            let noiseless = *noiseless || file.get::<bool>("noiseless")?.unwrap_or(false);
            file.reject_unknown()?;

            let audit_cfg = AuditConfig::default();
            let report = match mechanism {
                MechanismArg::RandomizedResponse => {
                    if noiseless {
                        return Err(Error::AuditRejected(
                            "randomized response has no noiseless mode to audit".into(),
                        ));
                    }
                    let pair = NeighborPair::new(vec![1], vec![0])?;
                    let p_true = epsilon.exp() / (1.0 + epsilon.exp());
                    let mech = move |stream: &[usize], rng: &mut panprivacy::ChaCha8Rng| {
                        let bit = (stream[0] & 1) as u8;
                        Some(if rng.gen::<f64>() < p_true { bit } else { bit ^ 1 })
                    };
                    empirical_epsilon(mech, &pair, claimed, trials, confidence, &audit_cfg, seed)?
                }
                MechanismArg::TesterState => {
                    let mut cfg = panprivacy::TesterConfig::new(k, 0.5, epsilon, seed.substream(7))?;
                    if noiseless {
                        cfg = cfg.noiseless();
                    }
                    let stream_a: Vec<usize> = (0..8).map(|i| i % k).collect();
                    let mut stream_b = stream_a.clone();
                    stream_b[4] = (stream_a[4] + 1) % k;
                    let pair = NeighborPair::new(stream_a, stream_b)?;
                    let mech = simple_pan_state_mechanism(&cfg, t, default_bin_width(epsilon))?;
                    let mut report =
                        empirical_epsilon(mech, &pair, claimed, trials, confidence, &audit_cfg, seed)?;
                    report.analytic_bound =
                        Some(laplace_state_ratio_bound(&pair, t, epsilon)?);
                    report
                }
            };

            println!("{}", serde_json::to_string(&report)?);
            Ok(match report.verdict {
                AuditVerdict::Fail => 1,
                AuditVerdict::Pass | AuditVerdict::Inconclusive => 0,
            })
        }

        Command::BridgeDemo {
            protocol,
            epsilon,
            trials,
            t_max,
        } => {
            let protocol = protocol.unwrap_or(ProtocolArg::Counter);
            let epsilon = resolve(*epsilon, file, "epsilon", 1.0)?;
            let trials = resolve(*trials, file, "trials", 100_000u64)?;
            let t_max = resolve(*t_max, file, "t_max", 4)?;
            file.reject_unknown()?;

            if trials < 1_000 {
                return Err(Error::domain(format!(
                    "bridge demo needs at least 1000 trials, got {trials}"
                )));
            }

            let make: Box<dyn Fn() -> PanProtocol> = match protocol {
                ProtocolArg::Counter => Box::new(|| two_intrusion_to_one(toy_counter())),
                ProtocolArg::RandomizedResponse => {
                    Box::new(move || two_intrusion_to_one(toy_randomized_response(epsilon)))
                }
                ProtocolArg::Adaptive => Box::new(move || local_to_pan(toy_local_adaptive(epsilon))),
            };
            let stream: Vec<usize> = (0..t_max).map(|i| (i * 7 + 1) % 2).collect();

            let source = make();
            let transformed = pan_to_local(make());
            let mut mc_tvs = Vec::with_capacity(t_max);
            let mut exact_tvs = Vec::with_capacity(t_max);
            for t in 1..=t_max {
                let states = empirical_distribution((0..trials).map(|i| {
                    let mut rng = seed.substream(2 * i).rng();
                    simulate(&source, &stream[..t], &[t], &mut rng).unwrap().observed[0]
                        .1
                        .clone()
                }));
                let transcripts = empirical_distribution((0..trials).map(|i| {
                    let mut rng = seed.substream(2 * i + 1).rng();
                    simulate_local(&transformed, &stream[..t], &mut rng)
                        .unwrap()
                        .encode_messages()
                }));
                mc_tvs.push(tv_between_maps(&states, &transcripts));

                let exact_states = exact_state_distribution(&source, &stream, t)?;
                let exact_transcripts = exact_transcript_distribution(&transformed, &stream, t)?;
                exact_tvs.push(tv_between_maps(&exact_states, &exact_transcripts));
            }

            let json = serde_json::json!({
                "protocol": source.id,
                "epsilon": epsilon,
                "trials": trials,
                "monte_carlo_tv_by_prefix": mc_tvs,
                "exact_tv_by_prefix": exact_tvs,
                "seed": seed_value,
            });
            println!("{json}");
            Ok(0)
        }
    }
}

fn resolve_out(flag: &Option<PathBuf>, file: &FileConfig) -> panprivacy::Result<Option<PathBuf>> {
    match flag {
        Some(p) => {
            let _ = file.raw("out");
            Ok(Some(p.clone()))
        }
        None => Ok(file.raw("out").map(PathBuf::from)),
    }
}

fn search_config(
    target_separation: &Option<f64>,
    trials_per_probe: &Option<u64>,
    m_cap: &Option<u64>,
    file: &FileConfig,
) -> panprivacy::Result<SearchConfig> {
    let defaults = SearchConfig::default();
    let target = resolve(*target_separation, file, "target_separation", defaults.target_separation)?;
    if !(0.0..1.0).contains(&target) {
        return Err(Error::domain(format!(
            "target separation must lie in [0, 1), got {target}"
        )));
    }
    Ok(SearchConfig {
        target_separation: target,
        trials_per_probe: resolve(*trials_per_probe, file, "trials_per_probe", defaults.trials_per_probe)?,
        m_cap: resolve(*m_cap, file, "m_cap", defaults.m_cap)?,
        ..defaults
    })
}

fn parse_k_values(flag: Option<&str>, file: &FileConfig) -> panprivacy::Result<Vec<usize>> {
    let text = match flag {
        Some(t) => {
            let _ = file.raw("k_values");
            t.to_string()
        }
        None => file
            .raw("k_values")
            .map(|s| s.to_string())
            .ok_or_else(|| Error::domain("missing required parameter: k_values"))?,
    };
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::domain(format!("bad domain size {tok:?} in k_values")))
        })
        .collect()
}

fn read_stream_file(path: &PathBuf, k: usize) -> panprivacy::Result<Vec<usize>> {
    let bad_data = |msg: String| {
        Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::InvalidData, msg),
        )
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        let x: usize = tok
            .parse()
            .map_err(|_| bad_data(format!("unparseable stream element {tok:?}")))?;
        if x >= k {
            return Err(bad_data(format!("element {x} outside domain of size {k}")));
        }
        out.push(x);
    }
    Ok(out)
}
