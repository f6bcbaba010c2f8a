//! Amplitude Flow, stochastic Amplitude Flow, the Kaczmarz method and PIE.
//!
//! All four share one driver: at every iteration the full loss and gradient
//! at `z^t` are evaluated for the trace, then the algorithm-specific update
//! produces `z^{t+1}`. Runs are sequential; independent runs only share the
//! (read-only) ensemble.

pub mod budget;
mod schedule;

pub use budget::{
    constant_step_bound, corollary_budget_decaying, fixed_step_budget, kaczmarz_budget, theorem_budget_constant,
    Bound, ConstantBudget, FixedStepBudget,
};
pub use schedule::StepSchedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, circular_shift, dft, idft, norm2, norm_inf, norm_sq, sgn, C64};
use crate::loss::{check_dim, measurements, wirtinger_gradient, LossError, LossSpec};
use crate::measurement::{Block, MeasurementEnsemble};
use crate::rng::SeededRng;
use crate::stochastic::{
    check_dist, sample_indices, stochastic_gradient_unchecked, variance_reducing_distribution, SamplingDistribution,
    SamplingError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("PIE needs an ensemble made only of STFT blocks")]
    NotStft,
    #[error("Kaczmarz needs an ensemble of single-row dense blocks")]
    NotRowPartition,
    #[error("row {0} is zero")]
    ZeroRow(usize),
    #[error("block index {index} out of range for {blocks} blocks")]
    Index { index: usize, blocks: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Af,
    Saf,
    Kaczmarz,
    Pie,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Af => "af",
            Algorithm::Saf => "saf",
            Algorithm::Kaczmarz => "kaczmarz",
            Algorithm::Pie => "pie",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "af" => Ok(Algorithm::Af),
            "saf" => Ok(Algorithm::Saf),
            "kaczmarz" => Ok(Algorithm::Kaczmarz),
            "pie" => Ok(Algorithm::Pie),
            _ => Err(format!("unknown algorithm {s:?} (expected af, saf, kaczmarz or pie)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Smoothing parameter. Kaczmarz and PIE always work with `eps = 0`.
    pub eps: f64,
    /// `mu_t` for AF/SAF, `alpha_t` for PIE; unused by Kaczmarz.
    pub schedule: StepSchedule,
    /// Blocks sampled per stochastic gradient.
    pub batch: usize,
    /// `None` means uniform, except Kaczmarz which defaults to variance-reducing.
    pub dist: Option<SamplingDistribution>,
    pub max_iters: usize,
    /// Stop once `||grad|| <= grad_tol`; zero disables early stopping.
    pub grad_tol: f64,
    pub seed: u64,
    pub stream: u64,
    pub trace_every: usize,
}

impl SolverConfig {
    pub fn new(eps: f64, schedule: StepSchedule, max_iters: usize) -> Self {
        Self {
            eps,
            schedule,
            batch: 1,
            dist: None,
            max_iters,
            grad_tol: 0.0,
            seed: 0,
            stream: 0,
            trace_every: 1,
        }
    }

    pub fn with_batch(mut self, k: usize) -> Self {
        self.batch = k;
        self
    }

    pub fn with_dist(mut self, dist: SamplingDistribution) -> Self {
        self.dist = Some(dist);
        self
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_trace_every(mut self, every: usize) -> Self {
        self.trace_every = every;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        LossSpec::new(self.eps)?;
        self.schedule.validate()?;
        if self.max_iters == 0 {
            return Err(SolverError::Config("max_iters must be at least 1".into()));
        }
        if self.trace_every == 0 {
            return Err(SolverError::Config("trace_every must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(SolverError::Config("batch size K must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(SolverError::Config(format!("grad_tol must be >= 0, got {}", self.grad_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `L_eps(z^t)`.
    pub loss: f64,
    /// `||grad L_eps(z^t)||_2`.
    pub grad_norm: f64,
    /// Step taken from `z^t` (effective SAF step for Kaczmarz/PIE); zero on the final record.
    pub mu: f64,
    pub indices: Vec<usize>,
    /// `sum_{s <= t} mu_s`.
    pub cum_mu: f64,
    /// `sum_{s <= t} mu_s ||grad L_eps(z^s)||^2`.
    pub cum_weighted_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    BudgetExhausted,
    GradientTolerance { t: usize },
    /// The update from `z^t` produced a non-finite iterate.
    NonFinite { t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub records: Vec<TraceRecord>,
    /// Last finite iterate.
    pub final_iterate: Vec<C64>,
    pub status: RunStatus,
    pub iterations: usize,
}

impl RunTrace {
    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::NonFinite { .. })
    }

    /// Running minimum of the recorded gradient norms.
    pub fn min_grad_curve(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.grad_norm);
                best
            })
            .collect()
    }
}

struct Step {
    next: Vec<C64>,
    mu: f64,
    indices: Vec<usize>,
}

/// Shared iteration loop. `update` gets `(t, z^t, grad L_eps(z^t), rng)`.
fn drive(
    algorithm: Algorithm,
    e: &MeasurementEnsemble,
    z0: &[C64],
    cfg: &SolverConfig,
    diag_eps: f64,
    mut update: impl FnMut(usize, &[C64], &[C64], &mut SeededRng) -> Step,
) -> Result<RunTrace, SolverError> {
    let spec = LossSpec::new(diag_eps)?;
    let mut rng = SeededRng::new(cfg.seed, cfg.stream);
    let mut z = z0.to_vec();
    let mut records = Vec::with_capacity(cfg.max_iters / cfg.trace_every + 2);
    let mut cum_mu = 0.0;
    let mut cum_weighted_sq = 0.0;
    let mut status = RunStatus::BudgetExhausted;
    let mut t = 0;
    while t < cfg.max_iters {
        let report = wirtinger_gradient(e, &z, &spec)?;
        let grad_norm = norm2(&report.gradient);
        if cfg.grad_tol > 0.0 && grad_norm <= cfg.grad_tol {
            status = RunStatus::GradientTolerance { t };
            break;
        }
        let step = update(t, &z, &report.gradient, &mut rng);
        cum_mu += step.mu;
        cum_weighted_sq += step.mu * grad_norm * grad_norm;
        let finite = all_finite(&step.next);
        if t % cfg.trace_every == 0 || !finite {
            records.push(TraceRecord {
                t,
                loss: report.loss,
                grad_norm,
                mu: step.mu,
                indices: step.indices,
                cum_mu,
                cum_weighted_sq,
            });
        }
        if !finite {
            log::warn!("{}: non-finite iterate after step {t}", algorithm.name());
            return Ok(RunTrace { algorithm, records, final_iterate: z, status: RunStatus::NonFinite { t }, iterations: t });
        }
        z = step.next;
        t += 1;
    }
    let report = wirtinger_gradient(e, &z, &spec)?;
    records.push(TraceRecord {
        t,
        loss: report.loss,
        grad_norm: norm2(&report.gradient),
        mu: 0.0,
        indices: Vec::new(),
        cum_mu,
        cum_weighted_sq,
    });
    Ok(RunTrace { algorithm, records, final_iterate: z, status, iterations: t })
}

fn prepare(e: &MeasurementEnsemble, z0: &[C64], cfg: &SolverConfig) -> Result<(), SolverError> {
    cfg.validate()?;
    check_dim(e, z0)?;
    measurements(e)?;
    if let Some(d) = &cfg.dist {
        check_dist(e, d)?;
    }
    Ok(())
}

fn uniform_or(e: &MeasurementEnsemble, cfg: &SolverConfig) -> Result<SamplingDistribution, SolverError> {
    match &cfg.dist {
        Some(d) => Ok(d.clone()),
        None => Ok(SamplingDistribution::uniform(e.num_blocks())?),
    }
}

/// Gradient descent `z^{t+1} = z^t - mu_t grad L_eps(z^t)`.
pub fn af_run(e: &MeasurementEnsemble, z0: &[C64], cfg: &SolverConfig) -> Result<RunTrace, SolverError> {
    prepare(e, z0, cfg)?;
    let schedule = cfg.schedule;
    drive(Algorithm::Af, e, z0, cfg, cfg.eps, |t, z, grad, _| {
        let mu = schedule.value(t as u64);
        Step { next: axpy(z, -mu, grad), mu, indices: Vec::new() }
    })
}

/// One SAF update `z - mu g(z)` for the given sampled indices.
pub fn saf_step(
    e: &MeasurementEnsemble,
    z: &[C64],
    spec: &LossSpec,
    indices: &[usize],
    dist: &SamplingDistribution,
    mu: f64,
) -> Result<Vec<C64>, SolverError> {
    let g = crate::stochastic::stochastic_gradient(e, z, spec, indices, dist)?;
    Ok(axpy(z, -mu, &g))
}

/// Stochastic gradient descent `z^{t+1} = z^t - mu_t g_eps(z^t)`, with `K`
/// fresh indices drawn with replacement at every iteration.
pub fn saf_run(e: &MeasurementEnsemble, z0: &[C64], cfg: &SolverConfig) -> Result<RunTrace, SolverError> {
    prepare(e, z0, cfg)?;
    let dist = uniform_or(e, cfg)?;
    let y = measurements(e)?;
    let (schedule, eps, k) = (cfg.schedule, cfg.eps, cfg.batch);
    drive(Algorithm::Saf, e, z0, cfg, eps, |t, z, _, rng| {
        let mu = schedule.value(t as u64);
        let indices = sample_indices(&dist, k, rng);
        let g = stochastic_gradient_unchecked(e, y, z, eps, &indices, &dist);
        Step { next: axpy(z, -mu, &g), mu, indices }
    })
}

fn single_row(e: &MeasurementEnsemble, r: usize) -> Result<&[C64], SolverError> {
    if r >= e.num_blocks() {
        return Err(SolverError::Index { index: r, blocks: e.num_blocks() });
    }
    match e.block(r) {
        Block::Dense(m) if m.nrows() == 1 => Ok(m.row(0)),
        _ => Err(SolverError::NotRowPartition),
    }
}

fn kaczmarz_update(row: &[C64], y_r: f64, z: &[C64], r: usize) -> Result<Vec<C64>, SolverError> {
    let row_sq = norm_sq(row);
    if row_sq == 0.0 {
        return Err(SolverError::ZeroRow(r));
    }
    let az: C64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
    // Magnitude target is sqrt(y_r); the update then satisfies |(A z+)_r| = sqrt(y_r).
    let target = sgn(az) * y_r.max(0.0).sqrt();
    let coef = (target - az) / row_sq;
    Ok(z.iter().zip(row).map(|(zj, a)| zj + a.conj() * coef).collect())
}

/// `z + A_(r)^* / ||A_(r)||^2 [sgn((Az)_r) sqrt(y_r) - (Az)_r]` for a
/// single-row block `r` (zero-based).
pub fn kaczmarz_step(e: &MeasurementEnsemble, z: &[C64], r: usize) -> Result<Vec<C64>, SolverError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    let row = single_row(e, r)?;
    kaczmarz_update(row, y[r][0], z, r)
}

/// Randomized Kaczmarz iterations. The trace records the equivalent SAF step
/// `p_r / ||A_(r)||^2` and diagnostics at `eps = 0`.
pub fn kaczmarz_run(e: &MeasurementEnsemble, z0: &[C64], cfg: &SolverConfig) -> Result<RunTrace, SolverError> {
    prepare(e, z0, cfg)?;
    if !e.is_row_partition() {
        return Err(SolverError::NotRowPartition);
    }
    let dist = match &cfg.dist {
        Some(d) => d.clone(),
        None => variance_reducing_distribution(e)?,
    };
    let y = measurements(e)?;
    let rows: Vec<&[C64]> = (0..e.num_blocks()).map(|r| single_row(e, r)).collect::<Result<_, _>>()?;
    if let Some(r) = rows.iter().position(|row| norm_sq(row) == 0.0) {
        return Err(SolverError::ZeroRow(r));
    }
    drive(Algorithm::Kaczmarz, e, z0, cfg, 0.0, |_, z, _, rng| {
        let r = dist.sample(rng);
        let next = kaczmarz_update(rows[r], y[r][0], z, r).expect("rows checked nonzero");
        Step { next, mu: dist.prob(r) / norm_sq(rows[r]), indices: vec![r] }
    })
}

fn stft_parts(e: &MeasurementEnsemble, r: usize) -> Result<(Vec<C64>, f64), SolverError> {
    if r >= e.num_blocks() {
        return Err(SolverError::Index { index: r, blocks: e.num_blocks() });
    }
    match e.block(r) {
        Block::Stft { window, shift } => Ok((circular_shift(window, *shift), norm_inf(window).powi(2))),
        Block::Dense(_) => Err(SolverError::NotStft),
    }
}

fn pie_update(sw: &[C64], w_inf_sq: f64, y_r: &[f64], z: &[C64], alpha: f64) -> Vec<C64> {
    // exit wave S_s w o z
    let psi: Vec<C64> = sw.iter().zip(z).map(|(a, b)| a * b).collect();
    let big_psi = dft(&psi);
    let corrected: Vec<C64> = big_psi.iter().zip(y_r).map(|(p, &y)| sgn(*p) * y.max(0.0).sqrt()).collect();
    let psi_new = idft(&corrected);
    let scale = alpha / w_inf_sq;
    z.iter()
        .zip(sw)
        .zip(psi_new.iter().zip(&psi))
        .map(|((zj, w), (pn, po))| zj + w.conj() * (pn - po) * scale)
        .collect()
}

/// One PIE update at shift position `r` (zero-based):
/// exit wave `psi = S_s w o z`, magnitudes of `F psi` replaced by `sqrt(y^r)`,
/// back-transformed to `psi'`, then `z + alpha/||w||_inf^2 conj(S_s w) o (psi' - psi)`.
pub fn pie_step(e: &MeasurementEnsemble, z: &[C64], r: usize, alpha: f64) -> Result<Vec<C64>, SolverError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    let (sw, w_inf_sq) = stft_parts(e, r)?;
    Ok(pie_update(&sw, w_inf_sq, &y[r], z, alpha))
}

/// PIE with i.i.d. shift selection; `cfg.schedule` is the `alpha_t` schedule.
/// The trace records the equivalent SAF step `alpha_t p_r / (d ||w||_inf^2)`.
pub fn pie_run(e: &MeasurementEnsemble, z0: &[C64], cfg: &SolverConfig) -> Result<RunTrace, SolverError> {
    prepare(e, z0, cfg)?;
    if e.stft_window().is_none() {
        return Err(SolverError::NotStft);
    }
    let dist = uniform_or(e, cfg)?;
    let y = measurements(e)?;
    let parts: Vec<(Vec<C64>, f64)> = (0..e.num_blocks()).map(|r| stft_parts(e, r)).collect::<Result<_, _>>()?;
    let d = e.dim() as f64;
    let schedule = cfg.schedule;
    drive(Algorithm::Pie, e, z0, cfg, 0.0, |t, z, _, rng| {
        let alpha = schedule.value(t as u64);
        let r = dist.sample(rng);
        let (sw, w_inf_sq) = &parts[r];
        let next = pie_update(sw, *w_inf_sq, &y[r], z, alpha);
        Step { next, mu: alpha * dist.prob(r) / (d * w_inf_sq), indices: vec![r] }
    })
}

/// SAF schedule that reproduces PIE with `alpha_schedule` under uniform
/// sampling over `R` blocks: `mu_t = alpha_t / (R d ||w||_inf^2)`.
pub fn pie_equivalent_saf_schedule(
    e: &MeasurementEnsemble,
    alpha_schedule: &StepSchedule,
) -> Result<StepSchedule, SolverError> {
    let w = e.stft_window().ok_or(SolverError::NotStft)?;
    let scale = 1.0 / (e.num_blocks() as f64 * e.dim() as f64 * norm_inf(w).powi(2));
    Ok(alpha_schedule.scaled(scale))
}

pub fn run(
    algorithm: Algorithm,
    e: &MeasurementEnsemble,
    z0: &[C64],
    cfg: &SolverConfig,
) -> Result<RunTrace, SolverError> {
    match algorithm {
        Algorithm::Af => af_run(e, z0, cfg),
        Algorithm::Saf => saf_run(e, z0, cfg),
        Algorithm::Kaczmarz => kaczmarz_run(e, z0, cfg),
        Algorithm::Pie => pie_run(e, z0, cfg),
    }
}

/// Hypotheses of the convergence results that a configuration violates.
/// These are warnings; the solvers run regardless.
pub fn hypothesis_warnings(
    algorithm: Algorithm,
    e: &MeasurementEnsemble,
    cfg: &SolverConfig,
    norm_a: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let a2 = norm_a * norm_a;
    let mu = cfg.schedule.base();
    match algorithm {
        Algorithm::Af => {
            if matches!(cfg.schedule, StepSchedule::Constant { .. }) && mu > 1.0 / a2 * (1.0 + 1e-12) {
                out.push(format!("constant step {mu:e} exceeds 1/||A||^2 = {:e}; monotone descent is not guaranteed", 1.0 / a2));
            }
        }
        Algorithm::Saf => {
            let beta = 1.0 - 1.0 / cfg.batch as f64;
            if beta * a2 * mu > 1.0 {
                out.push(format!("beta ||A||^2 mu = {} > 1 violates the step-size condition", beta * a2 * mu));
            }
        }
        Algorithm::Pie => {
            if matches!(cfg.schedule, StepSchedule::Constant { .. }) {
                out.push("constant alpha: no decay, so the almost-sure PIE convergence guarantee does not apply".into());
            }
            if cfg.dist.as_ref().is_some_and(|d| !d.is_uniform()) {
                out.push("non-uniform shift sampling: the PIE rate is stated for uniform probabilities".into());
            }
        }
        Algorithm::Kaczmarz => {}
    }
    if cfg.eps > 0.0 && matches!(algorithm, Algorithm::Kaczmarz | Algorithm::Pie) {
        out.push(format!("{} ignores eps = {}; diagnostics use eps = 0", algorithm.name(), cfg.eps));
    }
    let _ = e;
    out
}

fn axpy(z: &[C64], a: f64, g: &[C64]) -> Vec<C64> {
    z.iter().zip(g).map(|(zj, gj)| zj + gj * a).collect()
}

#[cfg(test)]
mod tests;
