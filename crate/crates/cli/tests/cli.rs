use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ampflow::MeasurementEnsemble;
use serde_json::Value;

const STFT_INSTANCE: &str = r#"{
  "d": 16,
  "signal_seed": 7,
  "ensemble": { "type": "stft", "window": { "type": "random", "support": 8, "seed": 7 }, "shifts": [0, 4, 8, 12] }
}"#;

fn ampflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampflow")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stft_config(dir: &Path, extra: &str) -> String {
    write_config(dir, "cfg.json", &format!(r#"{{"instance": {STFT_INSTANCE}{extra}}}"#))
}

#[test]
fn simulate_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(dir.path(), "");
    let a = ampflow(&["simulate", "--config", &cfg, "--out", "a"], dir.path());
    let b = ampflow(&["simulate", "--config", &cfg, "--out", "b"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let out = stdout(&a);
    assert!(out.contains("d = 16") && out.contains("R = 4") && out.contains("m = 64"), "{out}");
    assert!(out.contains("L0(x) = 0.0000000000000000e0"), "{out}");

    let text = fs::read_to_string(dir.path().join("a/ensemble.json")).unwrap();
    let e = MeasurementEnsemble::from_json(&text).unwrap();
    assert_eq!(e.to_json().unwrap(), text);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(text, fs::read_to_string(dir.path().join("b/ensemble.json")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a/manifest.json")).unwrap(),
        fs::read(dir.path().join("b/manifest.json")).unwrap()
    );
    let m = json(&dir.path().join("a/manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["seeds"]["signal"], 7);
}

#[test]
fn solve_af_auto_step_is_inverse_squared_norm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(dir.path(), "");
    let o = ampflow(&["solve", "--config", &cfg, "--algo", "af", "--mu", "auto", "--iters", "50", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&dir.path().join("o/summary.json"));
    let mu = s[0]["schedule"]["mu"].as_f64().unwrap();
    let norm_a = s[0]["constants"]["norm_a"].as_f64().unwrap();
    assert!((mu * norm_a * norm_a - 1.0).abs() < 1e-12);
    assert!(s[0]["warnings"].as_array().unwrap().is_empty());
    assert_eq!(s[0]["status"]["kind"], "budget_exhausted");

    let csv = fs::read_to_string(dir.path().join("o/af_0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,mean_loss,mean_grad_norm,min_mean_grad_norm,mu_t,cum_mu,cum_weighted_sq"));
    assert_eq!(csv.lines().count(), 52);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[4].parse::<f64>().unwrap(), mu);
}

#[test]
fn constant_alpha_pie_runs_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(dir.path(), "");
    let o = ampflow(&["solve", "--config", &cfg, "--algo", "pie", "--alpha0", "0.05", "--iters", "200", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&dir.path().join("o/summary.json"));
    assert_eq!(s[0]["schedule"]["mu"].as_f64(), Some(0.05));
    let warnings = s[0]["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("no decay")), "{warnings:?}");
}

#[test]
fn kaczmarz_summary_includes_nulling_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "k.json",
        r#"{"instance": {"d": 8, "signal_seed": 3, "ensemble": {"type": "dense_rows", "m": 48, "seed": 3}},
            "solvers": [{"algorithm": "kaczmarz", "iters": 300}]}"#,
    );
    let o = ampflow(&["solve", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&dir.path().join("o/summary.json"));
    let n = &s[0]["kaczmarz_nulling"];
    assert_eq!(n["passed"], true);
    assert_eq!(n["rows"], 48);
    assert!(s[0]["budgets"]["kaczmarz_iterations"].as_u64().unwrap() >= 1);
}

#[test]
fn solve_reads_a_simulated_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(dir.path(), "");
    assert_eq!(ampflow(&["simulate", "--config", &cfg, "--out", "sim"], dir.path()).status.code(), Some(0));
    let o = ampflow(&["solve", "--ensemble", "sim/ensemble.json", "--algo", "saf", "--iters", "20", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&dir.path().join("o/manifest.json"));
    assert_eq!(m["ensemble_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("o/saf_0.csv").exists());
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(
        dir.path(),
        r#", "solvers": [{"label": "saf", "algorithm": "saf", "step": 0.01, "theta": 0.25, "iters": 200}],
            "harness": {"trials": 6, "seed": 9}"#,
    );
    let a = ampflow(&["sweep", "--config", &cfg, "--out", "a"], dir.path());
    let b = ampflow(&["sweep", "--config", &cfg, "--out", "b"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    for f in ["saf.csv", "summary.json", "manifest.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let s = json(&dir.path().join("a/summary.json"));
    assert_eq!(s[0]["trials"], 6);
    assert!(s[0]["failed"].as_array().unwrap().is_empty());
    assert!(s[0]["rate"]["slope"].is_number());
}

#[test]
fn unknown_key_is_a_config_error_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"solvers": [{"algorithm": "af", "stepp": 1}]}"#);
    let o = ampflow(&["solve", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("solvers[0].stepp"), "{}", stderr(&o));

    let o = ampflow(&["solve", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = ampflow(&["solve", "--algo", "af"], dir.path());
    assert_eq!(o.status.code(), Some(1), "missing instance is a config error");
}

#[test]
fn divergence_exits_two_and_flushes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stft_config(dir.path(), "");
    let o = ampflow(&["solve", "--config", &cfg, "--algo", "af", "--mu", "1e300", "--iters", "50", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/af_0.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    let s = json(&dir.path().join("o/summary.json"));
    assert_eq!(s[0]["status"]["kind"], "non_finite");
}

#[test]
fn check_suite_passes_and_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampflow(&["check", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let r = json(&dir.path().join("o/check.json"));
    assert_eq!(r["passed"], true);
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in [
        "fd_gradient",
        "adjoint",
        "unbiasedness",
        "second_moment",
        "descent",
        "lipschitz",
        "hessian",
        "kaczmarz_nulling",
        "pie_saf_equivalence",
        "block_norm_identity",
    ] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn fd_check_at_zero_eps_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampflow(&["check", "--eps", "0", "--fd", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = json(&dir.path().join("o/check.json"));
    assert_eq!(r["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn tampered_gradient_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampflow(&["check", "--fd", "--fault", "gradient", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("fd_gradient"), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("o/check.json"))["passed"], false);
}

#[test]
fn unknown_check_name_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"check": {"only": ["descent", "nope"]}}"#);
    let o = ampflow(&["check", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("check.only[1]"), "{}", stderr(&o));
}
