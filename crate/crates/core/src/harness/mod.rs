//! Monte-Carlo experiments: many seeded runs of one or more solver
//! configurations on a shared instance, trial-mean curves, and the
//! verification checks built on them.

pub mod checks;
pub mod export;
mod instance;
pub mod suite;

pub use checks::{
    check_descent, check_second_moment, check_unbiasedness, fit_rate, DescentReport, DescentViolation, RateFit,
    SecondMomentPoint, UnbiasednessReport,
};
pub use instance::{EnsembleSpec, InitSpec, InstanceSpec, WindowSpec};

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{LinalgError, C64};
use crate::loss::LossError;
use crate::stochastic::SamplingError;
use crate::measurement::{MeasurementEnsemble, MeasurementError};
use crate::rng::trial_stream;
use crate::solvers::{run, Algorithm, RunTrace, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment needs at least one trial")]
    NoTrials,
    #[error("experiment needs at least one solver configuration")]
    NoConfigs,
    #[error("configuration {index} ({label}): {source}")]
    Config { index: usize, label: String, source: SolverError },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("curve has {0} points; at least 100 are needed")]
    ShortCurve(usize),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub label: String,
    pub algorithm: Algorithm,
    pub config: SolverConfig,
}

/// `trials` seeded runs of every configuration from a common `z0`. Trial
/// `n` of configuration `c` uses seed `base_seed` and stream `(c, n)`; the
/// seed/stream fields of each `SolverConfig` are overwritten.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub ensemble: Arc<MeasurementEnsemble>,
    pub z0: Vec<C64>,
    pub configs: Vec<ConfigEntry>,
    pub trials: usize,
    pub base_seed: u64,
    /// Worker threads; zero uses the rayon default.
    pub threads: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        if self.configs.is_empty() {
            return Err(HarnessError::NoConfigs);
        }
        for (index, c) in self.configs.iter().enumerate() {
            c.config
                .validate()
                .map_err(|source| HarnessError::Config { index, label: c.label.clone(), source })?;
        }
        Ok(())
    }

    fn trial_config(&self, c: usize, n: usize) -> SolverConfig {
        let stream = trial_stream(c as u32, n as u32);
        self.configs[c].config.clone().with_seed(self.base_seed, stream)
    }
}

/// Trial-mean curves over the successful traces of one configuration.
/// A trace that stopped early on the gradient tolerance is held at its final
/// record (with zero step) for the remaining rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub t: Vec<usize>,
    pub mean_loss: Vec<f64>,
    pub mean_grad_norm: Vec<f64>,
    /// Standard error of `mean_grad_norm` (zero for a single trial).
    pub stderr_grad_norm: Vec<f64>,
    /// Running minimum of `mean_grad_norm`.
    pub min_mean_grad_norm: Vec<f64>,
    pub mean_mu: Vec<f64>,
    pub mean_cum_mu: Vec<f64>,
    pub mean_cum_weighted_sq: Vec<f64>,
}

impl Aggregate {
    pub fn from_traces(traces: &[&RunTrace]) -> Option<Self> {
        let longest = traces.iter().max_by_key(|tr| tr.records.last().map_or(0, |r| r.t))?;
        let t: Vec<usize> = longest.records.iter().map(|r| r.t).collect();
        let n = traces.len() as f64;
        let rows = t.len();
        let mut agg = Aggregate {
            trials: traces.len(),
            t,
            mean_loss: vec![0.0; rows],
            mean_grad_norm: vec![0.0; rows],
            stderr_grad_norm: vec![0.0; rows],
            min_mean_grad_norm: vec![0.0; rows],
            mean_mu: vec![0.0; rows],
            mean_cum_mu: vec![0.0; rows],
            mean_cum_weighted_sq: vec![0.0; rows],
        };
        let mut sq = vec![0.0; rows];
        for tr in traces {
            for i in 0..rows {
                let (rec, held) = match tr.records.get(i) {
                    Some(r) => (r, false),
                    None => (tr.records.last().expect("traces have a final record"), true),
                };
                agg.mean_loss[i] += rec.loss;
                agg.mean_grad_norm[i] += rec.grad_norm;
                sq[i] += rec.grad_norm * rec.grad_norm;
                agg.mean_mu[i] += if held { 0.0 } else { rec.mu };
                agg.mean_cum_mu[i] += rec.cum_mu;
                agg.mean_cum_weighted_sq[i] += rec.cum_weighted_sq;
            }
        }
        let mut best = f64::INFINITY;
        for i in 0..rows {
            agg.mean_loss[i] /= n;
            agg.mean_grad_norm[i] /= n;
            agg.mean_mu[i] /= n;
            agg.mean_cum_mu[i] /= n;
            agg.mean_cum_weighted_sq[i] /= n;
            if traces.len() > 1 {
                let m = agg.mean_grad_norm[i];
                let var = ((sq[i] / n - m * m) * n / (n - 1.0)).max(0.0);
                agg.stderr_grad_norm[i] = (var / n).sqrt();
            }
            best = best.min(agg.mean_grad_norm[i]);
            agg.min_mean_grad_norm[i] = best;
        }
        Some(agg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub label: String,
    pub algorithm: Algorithm,
    /// One trace per trial, in trial order, including failed ones.
    pub traces: Vec<RunTrace>,
    /// Trials that stopped on a non-finite iterate.
    pub failed: Vec<usize>,
    /// `None` when every trial failed.
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub results: Vec<ConfigResult>,
}

impl TraceSet {
    pub fn result(&self, label: &str) -> Option<&ConfigResult> {
        self.results.iter().find(|r| r.label == label)
    }
}

/// Run every `(configuration, trial)` pair on a pool of `plan.threads`
/// workers. The result depends only on the plan.
pub fn run_trials(plan: &ExperimentPlan) -> Result<TraceSet, HarnessError> {
    plan.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..plan.configs.len()).flat_map(|c| (0..plan.trials).map(move |n| (c, n))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let traces: Vec<Result<RunTrace, SolverError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, n)| run(plan.configs[c].algorithm, &plan.ensemble, &plan.z0, &plan.trial_config(c, n)))
            .collect()
    });
    let mut traces = traces.into_iter();
    let mut results = Vec::with_capacity(plan.configs.len());
    for entry in &plan.configs {
        let runs: Vec<RunTrace> = traces.by_ref().take(plan.trials).collect::<Result<_, _>>()?;
        let failed: Vec<usize> = runs.iter().enumerate().filter(|(_, t)| t.is_aborted()).map(|(i, _)| i).collect();
        if !failed.is_empty() {
            log::warn!("{}: {} of {} trials hit non-finite iterates", entry.label, failed.len(), plan.trials);
        }
        let ok: Vec<&RunTrace> = runs.iter().filter(|t| !t.is_aborted()).collect();
        let aggregate = Aggregate::from_traces(&ok);
        results.push(ConfigResult { label: entry.label.clone(), algorithm: entry.algorithm, traces: runs, failed, aggregate });
    }
    Ok(TraceSet { results })
}
