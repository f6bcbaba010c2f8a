//! The four subcommands. Each writes its outputs plus `manifest.json` into
//! the output directory.

use std::path::PathBuf;
use std::sync::Arc;

use ampflow::harness::export::{aggregate_csv, fmt_real};
use ampflow::harness::suite::{self, CheckResult, Fault, SuiteConfig, SuiteReport, CHECK_NAMES};
use ampflow::harness::{fit_rate, run_trials, Aggregate, ConfigEntry, ExperimentPlan, HarnessError, RateFit};
use ampflow::loss::{lipschitz_constant, loss_value};
use ampflow::rng::trial_stream;
use ampflow::solvers::{
    fixed_step_budget, hypothesis_warnings, kaczmarz_budget, kaczmarz_step, run, theorem_budget_constant,
    ConstantBudget, FixedStepBudget,
};
use ampflow::stochastic::{abc_constants, variance_reducing_distribution};
use ampflow::{
    Algorithm, LossSpec, MeasurementEnsemble, PowerIteration, RunStatus, RunTrace, SamplingDistribution, SolverConfig,
    StepSchedule, C64,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CliConfig, Sampling, SolverSpec, Step};
use crate::error::CliError;

const DEFAULT_OUT: &str = "ampflow-out";

#[derive(Debug, Serialize)]
struct Seeds {
    base: u64,
    signal: Option<u64>,
    init: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    ensemble_sha256: Option<String>,
    seeds: Seeds,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Context {
    cfg: CliConfig,
    out: PathBuf,
    ensemble_sha256: Option<String>,
    outputs: Vec<String>,
}

impl Context {
    fn new(cfg: CliConfig) -> Result<Self, CliError> {
        let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        std::fs::create_dir_all(&out)?;
        Ok(Self { cfg, out, ensemble_sha256: None, outputs: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn ensemble(&mut self) -> Result<MeasurementEnsemble, CliError> {
        if let Some(path) = self.cfg.ensemble_file.clone() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read ensemble {}: {e}", path.display())))?;
            self.ensemble_sha256 = Some(sha256_hex(text.as_bytes()));
            return Ok(MeasurementEnsemble::from_json(&text)?);
        }
        match &self.cfg.instance {
            Some(spec) => Ok(spec.build()?),
            None => Err(CliError::Config("at `instance`: an instance or ensemble_file is required".into())),
        }
    }

    /// Writes the manifest. The config hash covers everything that affects
    /// outputs, so the output location is left out of it.
    fn finish(&mut self, command: &str) -> Result<(), CliError> {
        let mut hashed = self.cfg.clone();
        hashed.output = None;
        let canon = serde_json::to_string(&(command, &hashed)).map_err(|e| CliError::Config(e.to_string()))?;
        let init_seed = match &self.cfg.init {
            ampflow::harness::InitSpec::Random { seed, .. } | ampflow::harness::InitSpec::NearTruth { seed, .. } => {
                Some(*seed)
            }
            ampflow::harness::InitSpec::Values { .. } => None,
        };
        let manifest = Manifest {
            command,
            version: ampflow::VERSION,
            config_sha256: sha256_hex(canon.as_bytes()),
            ensemble_sha256: self.ensemble_sha256.clone(),
            seeds: Seeds {
                base: self.cfg.harness.seed,
                signal: self.cfg.instance.as_ref().map(|i| i.signal_seed),
                init: init_seed,
            },
            outputs: self.outputs.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

pub fn simulate(cfg: CliConfig) -> Result<(), CliError> {
    let mut ctx = Context::new(cfg)?;
    let spec = ctx
        .cfg
        .instance
        .clone()
        .ok_or_else(|| CliError::Config("at `instance`: simulate needs an instance section".into()))?;
    let e = spec.build()?;
    let norm_a = e.operator_norm(PowerIteration::default())?;
    let l0 = loss_value(&e, e.truth().expect("simulated"), &LossSpec::new(0.0)?)?.value;
    let text = e.to_json()?;
    ctx.write("ensemble.json", &text)?;
    println!("d = {}", e.dim());
    println!("R = {}", e.num_blocks());
    println!("m = {}", e.total_rows());
    println!("norm_A = {}", fmt_real(norm_a));
    println!("norm_A_fro = {}", fmt_real(e.frobenius_norm()));
    println!("L0(x) = {}", fmt_real(l0));
    ctx.finish("simulate")
}

fn resolve_step(spec: &SolverSpec, norm_a: f64) -> f64 {
    match spec.step {
        Step::Value(v) => v,
        Step::Auto => match spec.algorithm {
            Algorithm::Af | Algorithm::Saf => 1.0 / (norm_a * norm_a),
            Algorithm::Kaczmarz | Algorithm::Pie => 1.0,
        },
    }
}

fn resolve_dist(spec: &SolverSpec, e: &MeasurementEnsemble) -> Result<Option<SamplingDistribution>, CliError> {
    Ok(match &spec.sampling {
        None => None,
        Some(Sampling::Uniform) => Some(SamplingDistribution::uniform(e.num_blocks())?),
        Some(Sampling::VarianceReducing) => Some(variance_reducing_distribution(e)?),
        Some(Sampling::Probabilities(p)) => Some(SamplingDistribution::new(p.clone())?),
    })
}

fn solver_config(spec: &SolverSpec, e: &MeasurementEnsemble, norm_a: f64, seed: u64) -> Result<SolverConfig, CliError> {
    let step = resolve_step(spec, norm_a);
    let schedule = match spec.theta {
        Some(theta) => StepSchedule::polynomial(step, theta)?,
        None => StepSchedule::constant(step)?,
    };
    let mut cfg = SolverConfig::new(spec.eps, schedule, spec.iters)
        .with_batch(spec.k)
        .with_grad_tol(spec.grad_tol)
        .with_trace_every(spec.trace_every)
        .with_seed(seed, 0);
    if let Some(d) = resolve_dist(spec, e)? {
        cfg = cfg.with_dist(d);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Constants {
    norm_a: f64,
    norm_a_fro: f64,
    alpha: f64,
    beta: f64,
    delta_upper: f64,
    /// Gradient Lipschitz constant, defined for `eps > 0` only.
    lipschitz: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct Budgets {
    gamma: Option<f64>,
    loss_gap: f64,
    constant_step: Option<ConstantBudget>,
    fixed_step: Option<FixedStepBudget>,
    kaczmarz_gamma: Option<f64>,
    kaczmarz_iterations: Option<u64>,
}

#[derive(Debug, Serialize)]
struct SolverSummary {
    label: String,
    algorithm: Algorithm,
    eps: f64,
    schedule: StepSchedule,
    k: usize,
    iters: usize,
    warnings: Vec<String>,
    constants: Constants,
    budgets: Budgets,
}

fn summarize(
    label: String,
    algorithm: Algorithm,
    e: &MeasurementEnsemble,
    z0: &[C64],
    cfg: &SolverConfig,
    gamma: Option<f64>,
    norm_a: f64,
) -> Result<SolverSummary, CliError> {
    let diag_eps = if matches!(algorithm, Algorithm::Kaczmarz | Algorithm::Pie) { 0.0 } else { cfg.eps };
    let spec = LossSpec::new(diag_eps)?;
    let dist = match (&cfg.dist, algorithm) {
        (Some(d), _) => d.clone(),
        (None, Algorithm::Kaczmarz) => variance_reducing_distribution(e)?,
        (None, _) => SamplingDistribution::uniform(e.num_blocks())?,
    };
    let abc = abc_constants(e, cfg.batch, &dist, None)?;
    let y = e.flat_measurements().ok_or_else(|| CliError::Config("ensemble has no measurements".into()))?;
    let lipschitz = if diag_eps > 0.0 { Some(lipschitz_constant(&spec, &y, norm_a)?) } else { None };
    let loss_gap = loss_value(e, z0, &spec)?.value;
    let mut budgets = Budgets { gamma, loss_gap, ..Budgets::default() };
    if let Some(g) = gamma {
        budgets.constant_step = Some(theorem_budget_constant(g, loss_gap, &abc, norm_a)?);
        if let (StepSchedule::Constant { mu }, Algorithm::Af | Algorithm::Saf) = (cfg.schedule, algorithm) {
            budgets.fixed_step = Some(fixed_step_budget(g, loss_gap, &abc, norm_a, mu)?);
        }
    }
    if algorithm == Algorithm::Kaczmarz && e.is_row_partition() {
        budgets.kaczmarz_gamma = Some(4.0 * norm_a * loss_gap.sqrt());
        budgets.kaczmarz_iterations = Some(kaczmarz_budget(e.frobenius_norm(), norm_a));
    }
    Ok(SolverSummary {
        label,
        algorithm,
        eps: cfg.eps,
        schedule: cfg.schedule,
        k: cfg.batch,
        iters: cfg.max_iters,
        warnings: hypothesis_warnings(algorithm, e, cfg, norm_a),
        constants: Constants {
            norm_a,
            norm_a_fro: e.frobenius_norm(),
            alpha: abc.alpha,
            beta: abc.beta,
            delta_upper: abc.delta_upper,
            lipschitz,
        },
        budgets,
    })
}

#[derive(Debug, Serialize)]
struct NullingReport {
    rows: usize,
    worst: f64,
    tolerance: f64,
    passed: bool,
}

/// One Kaczmarz step from `z` on every row must fit that row exactly.
fn nulling_report(e: &MeasurementEnsemble, z: &[C64]) -> Result<NullingReport, CliError> {
    let y = e.measurements().ok_or_else(|| CliError::Config("ensemble has no measurements".into()))?;
    let mut worst = 0.0f64;
    for r in 0..e.num_blocks() {
        let zp = kaczmarz_step(e, z, r)?;
        let az = e.block(r).apply(&zp)?[0];
        let root = y[r][0].max(0.0).sqrt();
        worst = worst.max((az.norm() - root).abs() / (1.0 + root));
    }
    let tolerance = 1e-10;
    Ok(NullingReport { rows: e.num_blocks(), worst, tolerance, passed: worst <= tolerance })
}

#[derive(Debug, Serialize)]
struct SolveEntry {
    #[serde(flatten)]
    summary: SolverSummary,
    status: RunStatus,
    iterations: usize,
    final_loss: f64,
    final_grad_norm: f64,
    min_grad_norm: f64,
    csv: String,
    kaczmarz_nulling: Option<NullingReport>,
}

fn labels(cfg: &CliConfig) -> Result<Vec<String>, CliError> {
    if cfg.solvers.is_empty() {
        return Err(CliError::Config("at `solvers`: at least one solver is required (or pass --algo)".into()));
    }
    let labels: Vec<String> = cfg.solvers.iter().enumerate().map(|(i, s)| s.label(i)).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(CliError::Config(format!("at `solvers[{i}].label`: duplicate label {l:?}")));
        }
        if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(CliError::Config(format!("at `solvers[{i}].label`: use letters, digits, '_' or '-'")));
        }
    }
    Ok(labels)
}

fn trace_csv(trace: &RunTrace) -> String {
    aggregate_csv(&Aggregate::from_traces(&[trace]).expect("one trace"))
}

pub fn solve(cfg: CliConfig) -> Result<(), CliError> {
    let labels = labels(&cfg)?;
    let mut ctx = Context::new(cfg)?;
    let e = ctx.ensemble()?;
    let z0 = ctx.cfg.init.build(&e)?;
    let norm_a = e.operator_norm(PowerIteration::default())?;
    let seed = ctx.cfg.harness.seed;
    let mut entries = Vec::new();
    let mut aborted = Vec::new();
    for (i, (spec, label)) in ctx.cfg.solvers.clone().iter().zip(labels).enumerate() {
        let sc = solver_config(spec, &e, norm_a, seed)?.with_seed(seed, trial_stream(i as u32, 0));
        let summary = summarize(label.clone(), spec.algorithm, &e, &z0, &sc, spec.gamma, norm_a)?;
        for w in &summary.warnings {
            log::warn!("{label}: {w}");
        }
        let trace = run(spec.algorithm, &e, &z0, &sc)?;
        let csv = format!("{label}.csv");
        ctx.write(&csv, &trace_csv(&trace))?;
        let last = trace.records.last().expect("final record");
        if let RunStatus::NonFinite { t } = trace.status {
            aborted.push(format!("{label} at t = {t}"));
        }
        let kaczmarz_nulling = if spec.algorithm == Algorithm::Kaczmarz && e.is_row_partition() && !trace.is_aborted() {
            Some(nulling_report(&e, &trace.final_iterate)?)
        } else {
            None
        };
        println!(
            "{label}: {} iterations, loss {}, grad norm {}",
            trace.iterations,
            fmt_real(last.loss),
            fmt_real(last.grad_norm)
        );
        entries.push(SolveEntry {
            summary,
            status: trace.status,
            iterations: trace.iterations,
            final_loss: last.loss,
            final_grad_norm: last.grad_norm,
            min_grad_norm: trace.min_grad_curve().last().copied().unwrap_or(f64::NAN),
            csv,
            kaczmarz_nulling,
        });
    }
    ctx.write_json("summary.json", &entries)?;
    ctx.finish("solve")?;
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("non-finite iterate in {}", aborted.join(", "))))
    }
}

#[derive(Debug, Serialize)]
struct RateSummary {
    slope: Option<f64>,
    threshold: Option<f64>,
    already_converged: bool,
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    #[serde(flatten)]
    summary: SolverSummary,
    trials: usize,
    failed: Vec<usize>,
    final_mean_loss: Option<f64>,
    min_mean_grad_norm: Option<f64>,
    rate: Option<RateSummary>,
    csv: Option<String>,
}

fn rate(agg: &Aggregate, schedule: &StepSchedule) -> Option<RateSummary> {
    match fit_rate(&agg.t, &agg.min_mean_grad_norm, schedule) {
        Ok(RateFit::Slope { slope, threshold, .. }) => {
            Some(RateSummary { slope: Some(slope), threshold, already_converged: false })
        }
        Ok(RateFit::AlreadyConverged) => Some(RateSummary { slope: None, threshold: None, already_converged: true }),
        Err(HarnessError::ShortCurve(_)) => None,
        Err(e) => {
            log::warn!("rate fit: {e}");
            None
        }
    }
}

pub fn sweep(cfg: CliConfig) -> Result<(), CliError> {
    let labels = labels(&cfg)?;
    let mut ctx = Context::new(cfg)?;
    let e = ctx.ensemble()?;
    let z0 = ctx.cfg.init.build(&e)?;
    let norm_a = e.operator_norm(PowerIteration::default())?;
    let h = ctx.cfg.harness.clone();
    let mut configs = Vec::new();
    let mut summaries = Vec::new();
    for (spec, label) in ctx.cfg.solvers.iter().zip(&labels) {
        let sc = solver_config(spec, &e, norm_a, h.seed)?;
        let s = summarize(label.clone(), spec.algorithm, &e, &z0, &sc, spec.gamma, norm_a)?;
        for w in &s.warnings {
            log::warn!("{label}: {w}");
        }
        summaries.push(s);
        configs.push(ConfigEntry { label: label.clone(), algorithm: spec.algorithm, config: sc });
    }
    let plan = ExperimentPlan {
        ensemble: Arc::new(e),
        z0,
        configs,
        trials: h.trials,
        base_seed: h.seed,
        threads: h.threads,
    };
    let set = run_trials(&plan)?;
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for ((res, summary), entry) in set.results.iter().zip(summaries).zip(&plan.configs) {
        let csv = match &res.aggregate {
            Some(agg) => {
                let name = format!("{}.csv", res.label);
                ctx.write(&name, &aggregate_csv(agg))?;
                Some(name)
            }
            None => None,
        };
        if !res.failed.is_empty() {
            failures.push(format!("{} ({} of {} trials)", res.label, res.failed.len(), h.trials));
        }
        let agg = res.aggregate.as_ref();
        println!(
            "{}: {} trials, {} failed, min mean grad norm {}",
            res.label,
            h.trials,
            res.failed.len(),
            agg.and_then(|a| a.min_mean_grad_norm.last()).map_or("n/a".into(), |v| fmt_real(*v))
        );
        entries.push(SweepEntry {
            summary,
            trials: h.trials,
            failed: res.failed.clone(),
            final_mean_loss: agg.and_then(|a| a.mean_loss.last().copied()),
            min_mean_grad_norm: agg.and_then(|a| a.min_mean_grad_norm.last().copied()),
            rate: agg.and_then(|a| rate(a, &entry.config.schedule)),
            csv,
        });
    }
    ctx.write_json("summary.json", &entries)?;
    ctx.finish("sweep")?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("non-finite iterates in {}", failures.join(", "))))
    }
}

fn run_check(name: &str, cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    match name {
        "fd_gradient" => suite::fd_gradient(cfg),
        "adjoint" => suite::adjoint(cfg),
        "unbiasedness" => suite::unbiasedness(cfg),
        "second_moment" => suite::second_moment(cfg),
        "descent" => suite::descent(cfg),
        "lipschitz" => suite::lipschitz(cfg),
        "hessian" => suite::hessian(cfg),
        "kaczmarz_nulling" => suite::kaczmarz_nulling(cfg),
        "pie_saf_equivalence" => suite::pie_saf_equivalence(cfg),
        "block_norm_identity" => suite::block_norm_identity(cfg),
        "zero_gradient_at_origin" => suite::zero_gradient_at_origin(cfg),
        "phase_equivariance" => suite::phase_equivariance(cfg),
        _ => unreachable!("names are validated"),
    }
}

pub struct CheckOptions {
    pub eps: Option<f64>,
    pub fd_only: bool,
    pub fault: Option<Fault>,
}

pub fn check(cfg: CliConfig, opts: CheckOptions) -> Result<(), CliError> {
    let mut suite_cfg = cfg.suite_config(opts.fault);
    if let Some(eps) = opts.eps {
        suite_cfg.fd_eps = vec![eps];
    }
    let names: Vec<String> = if opts.fd_only {
        vec!["fd_gradient".into()]
    } else {
        match &cfg.check.only {
            Some(list) => list.clone(),
            None => CHECK_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    };
    for (i, n) in names.iter().enumerate() {
        if !CHECK_NAMES.contains(&n.as_str()) {
            return Err(CliError::Config(format!(
                "at `check.only[{i}]`: unknown check {n:?} (expected one of {})",
                CHECK_NAMES.join(", ")
            )));
        }
    }
    let mut ctx = Context::new(cfg)?;
    let mut checks = Vec::new();
    for n in &names {
        let c = run_check(n, &suite_cfg)?;
        println!(
            "{:<24} {}  worst {} tol {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            fmt_real(c.worst),
            fmt_real(c.tolerance)
        );
        checks.push(c);
    }
    let report = SuiteReport { passed: checks.iter().all(|c| c.passed), seed: suite_cfg.seed, checks };
    ctx.write_json("check.json", &report)?;
    ctx.finish("check")?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Check(report.failed().join(", ")))
    }
}
