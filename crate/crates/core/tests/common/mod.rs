#![allow(dead_code)]

use std::sync::Arc;

use ampflow::harness::{ConfigEntry, ExperimentPlan, InitSpec, InstanceSpec};
use ampflow::solvers::{Algorithm, SolverConfig, StepSchedule};
use ampflow::stochastic::abc_constants;
use ampflow::SamplingDistribution;

pub const THETA: f64 = 0.25;

/// Noiseless STFT instance with SAF (base step `1/alpha`) and, optionally,
/// PIE with the matching `alpha_0 = 1`, both on the `theta = 1/4` schedule.
pub fn decaying_plan(d: usize, r: usize, iters: usize, trials: usize, with_pie: bool) -> ExperimentPlan {
    let e = InstanceSpec::reference_stft(d, r, 1).build().unwrap();
    let z0 = InitSpec::Random { seed: 1, scale: 1.0 }.build(&e).unwrap();
    let dist = SamplingDistribution::uniform(r).unwrap();
    let alpha = abc_constants(&e, 1, &dist, None).unwrap().alpha;
    let saf = SolverConfig::new(0.0, StepSchedule::polynomial(1.0 / alpha, THETA).unwrap(), iters).with_trace_every(10);
    let mut configs = vec![ConfigEntry { label: "saf".into(), algorithm: Algorithm::Saf, config: saf }];
    if with_pie {
        let pie = SolverConfig::new(0.0, StepSchedule::polynomial(1.0, THETA).unwrap(), iters).with_trace_every(10);
        configs.push(ConfigEntry { label: "pie".into(), algorithm: Algorithm::Pie, config: pie });
    }
    ExperimentPlan { ensemble: Arc::new(e), z0, configs, trials, base_seed: 2024, threads: 0 }
}
