//! End-to-end checks of the binary: output schemas, exit codes,
//! config-file precedence, and run-to-run determinism.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

fn pantest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pantest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn tmp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("pantest-cli-{}-{name}", std::process::id()))
}

#[test]
fn exact_uniform_noiseless_is_uniform() {
    let out = pantest(&[
        "test",
        "--tester",
        "simple",
        "--k",
        "4",
        "--m",
        "400",
        "--noiseless",
        "--instance",
        "exact-uniform",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["verdict"], "Uniform");
    assert_eq!(v["statistic"], -4.0);
    assert_eq!(v["samples_consumed"], 400);
    assert_eq!(v["seed"], 1);
}

#[test]
fn invalid_alpha_exits_2() {
    let out = pantest(&["test", "--k", "4", "--m", "100", "--alpha", "1.5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_config_same_output() {
    let args = [
        "test", "--tester", "pan", "--k", "20", "--m", "300", "--instance", "paninski-far",
        "--seed", "99",
    ];
    let a = pantest(&args);
    let b = pantest(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn short_stream_file_exits_3() {
    let path = tmp_path("short.txt");
    std::fs::write(&path, "0 1 2 3 0 1\n").unwrap();
    let out = pantest(&[
        "test",
        "--k",
        "4",
        "--m",
        "100",
        "--instance",
        "file",
        "--stream-file",
        path.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_file(path).ok();
}

#[test]
fn garbage_stream_file_exits_3() {
    let path = tmp_path("garbage.txt");
    std::fs::write(&path, "0 1 banana 3\n").unwrap();
    let out = pantest(&[
        "test",
        "--k",
        "4",
        "--m",
        "10",
        "--instance",
        "file",
        "--stream-file",
        path.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_file(path).ok();
}

#[test]
fn config_file_precedence() {
    let path = tmp_path("cfg.conf");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "k = 4").unwrap();
    writeln!(f, "m = 400").unwrap();
    writeln!(f, "noiseless = true").unwrap();
    writeln!(f, "instance = exact-uniform").unwrap();
    drop(f);

    // file supplies everything
    let out = pantest(&["--config", path.to_str().unwrap(), "--seed", "1", "test"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["statistic"], -4.0);

    // flag overrides file: k=8 changes the statistic to -8
    let out = pantest(&["--config", path.to_str().unwrap(), "--seed", "1", "test", "--k", "8"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["statistic"], -8.0);
    std::fs::remove_file(path).ok();
}

#[test]
fn unknown_config_key_exits_2() {
    let path = tmp_path("bad.conf");
    std::fs::write(&path, "k = 4\nm = 100\nwhatever = 3\n").unwrap();
    let out = pantest(&["--config", path.to_str().unwrap(), "--seed", "1", "test"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_file(path).ok();
}

#[test]
fn audit_exit_codes() {
    // honest claim passes
    let out = pantest(&[
        "audit",
        "--mechanism",
        "randomized-response",
        "--claimed-epsilon",
        "1.0",
        "--trials",
        "100000",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["verdict"], "Pass");

    // understated claim fails with exit 1
    let out = pantest(&[
        "audit",
        "--mechanism",
        "randomized-response",
        "--claimed-epsilon",
        "0.5",
        "--epsilon",
        "1.0",
        "--trials",
        "100000",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // overstated claim passes (one-sided estimator)
    let out = pantest(&[
        "audit",
        "--mechanism",
        "randomized-response",
        "--claimed-epsilon",
        "2.0",
        "--epsilon",
        "1.0",
        "--trials",
        "20000",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));

    // noiseless tester audit is a config error
    let out = pantest(&[
        "audit",
        "--mechanism",
        "tester-state",
        "--claimed-epsilon",
        "1.0",
        "--noiseless",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bridge_demo_counter_is_exact() {
    let out = pantest(&["bridge-demo", "--protocol", "counter", "--trials", "2000", "--seed", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    for tv in v["exact_tv_by_prefix"].as_array().unwrap() {
        assert_eq!(tv.as_f64().unwrap(), 0.0);
    }
    for tv in v["monte_carlo_tv_by_prefix"].as_array().unwrap() {
        assert_eq!(tv.as_f64().unwrap(), 0.0);
    }

    let out = pantest(&["bridge-demo", "--protocol", "counter", "--trials", "10", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn complexity_not_found_is_success() {
    let out = pantest(&[
        "complexity",
        "--tester",
        "chi2",
        "--k",
        "8",
        "--alpha",
        "0.5",
        "--target-separation",
        "0.999",
        "--m-cap",
        "64",
        "--trials-per-probe",
        "100",
        "--seed",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("NotFound"));
}

#[test]
fn power_round_trips_through_results_file() {
    let path = tmp_path("power.jsonl");
    let out = pantest(&[
        "power",
        "--tester",
        "simple",
        "--k",
        "8",
        "--m",
        "100",
        "--trials",
        "200",
        "--seed",
        "12",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(line["record"], "Power");
    assert_eq!(line["m"], 100);
    assert!(line["timestamp_ms"].as_u64().is_some());
    std::fs::remove_file(path).ok();
}

#[test]
fn threads_flag_reproduces_parallel_results() {
    let args_tail = [
        "power", "--tester", "simple", "--k", "16", "--m", "200", "--trials", "400", "--seed",
        "44",
    ];
    let one = pantest(&[&["--threads", "1"], &args_tail[..]].concat());
    let many = pantest(&[&["--threads", "4"], &args_tail[..]].concat());
    assert!(one.status.success());
    assert_eq!(stdout(&one), stdout(&many));
}

#[test]
fn valid_stream_file_runs_to_verdict() {
    let path = tmp_path("long.txt");
    let elements: Vec<String> = (0..600).map(|t| (t % 4).to_string()).collect();
    std::fs::write(&path, elements.join(" ")).unwrap();
    let out = pantest(&[
        "test",
        "--k",
        "4",
        "--m",
        "400",
        "--noiseless",
        "--instance",
        "file",
        "--stream-file",
        path.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["verdict"], "Uniform");
    std::fs::remove_file(path).ok();
}

#[test]
fn partition_experiment_reports_json() {
    let out = pantest(&[
        "partition-exp",
        "--k",
        "16",
        "--n",
        "4",
        "--tv",
        "0.4",
        "--trials",
        "2000",
        "--seed",
        "9",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["k"], 16);
    assert_eq!(v["n"], 4);
    assert!(v["success_fraction"].as_f64().unwrap() > 0.0);
    assert!(v["bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn curve_command_runs_from_config_file() {
    let conf = tmp_path("curve.conf");
    std::fs::write(
        &conf,
        "tester = chi2\nk_values = 8,16\nalpha = 0.5\ntrials_per_probe = 100\n",
    )
    .unwrap();
    let jsonl = tmp_path("curve.jsonl");
    let csv = tmp_path("curve.csv");
    let out = pantest(&[
        "--config",
        conf.to_str().unwrap(),
        "--seed",
        "30",
        "curve",
        "--out",
        jsonl.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("m_star"), "{text}");
    assert!(text.contains("slope"), "{text}");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("k,alpha,epsilon,tester,m_star,slope,stderr"));
    assert_eq!(csv_text.lines().count(), 3);
    for p in [conf, jsonl, csv] {
        std::fs::remove_file(p).ok();
    }
}

#[test]
fn missing_seed_is_drawn_and_printed() {
    let out = pantest(&["test", "--k", "4", "--m", "50", "--noiseless", "--instance", "exact-uniform"]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed: "), "stderr {err:?}");
}
