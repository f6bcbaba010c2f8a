//! SAF reference run on the d = 8, R = 4 noiseless STFT instance, compared
//! against the committed trial-mean curve.

mod common;

use ampflow::harness::run_trials;
use serde::{Deserialize, Serialize};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/saf_reference.json");

#[derive(Serialize, Deserialize)]
struct Fixture {
    trials: usize,
    t: Vec<usize>,
    mean_grad_norm: Vec<f64>,
    stderr_grad_norm: Vec<f64>,
}

fn reference() -> Fixture {
    let plan = common::decaying_plan(8, 4, 10_000, 64, false);
    let set = run_trials(&plan).unwrap();
    let r = &set.results[0];
    assert!(r.failed.is_empty());
    let a = r.aggregate.clone().unwrap();
    Fixture { trials: a.trials, t: a.t, mean_grad_norm: a.mean_grad_norm, stderr_grad_norm: a.stderr_grad_norm }
}

#[test]
fn saf_reference_within_fixture_bands() {
    let fixture: Fixture = serde_json::from_str(&std::fs::read_to_string(FIXTURE).unwrap()).unwrap();
    let got = reference();
    assert_eq!(got.trials, fixture.trials);
    assert_eq!(got.t, fixture.t);
    for i in 0..got.t.len() {
        let band = 5.0 * fixture.stderr_grad_norm[i] + 1e-9 * fixture.mean_grad_norm[i];
        assert!(
            (got.mean_grad_norm[i] - fixture.mean_grad_norm[i]).abs() <= band,
            "t = {}: {} outside {} +/- {}",
            got.t[i],
            got.mean_grad_norm[i],
            fixture.mean_grad_norm[i],
            band
        );
    }
}

#[test]
fn saf_reference_running_min_drops_tenfold() {
    let got = reference();
    let mut best = f64::INFINITY;
    let mins: Vec<f64> = got.mean_grad_norm.iter().map(|&g| { best = best.min(g); best }).collect();
    assert!(mins.windows(2).all(|w| w[1] <= w[0]));
    assert!(mins[mins.len() - 1] < got.mean_grad_norm[0] / 10.0, "{} vs {}", mins[mins.len() - 1], got.mean_grad_norm[0]);
}

/// Rewrites the fixture; run with `cargo test --test regression -- --ignored`.
#[test]
#[ignore]
fn regenerate_fixture() {
    let json = serde_json::to_string(&reference()).unwrap();
    std::fs::write(FIXTURE, json).unwrap();
}
