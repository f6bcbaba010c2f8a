//! Named invariant checks with pass/fail verdicts. Each check builds its own
//! small seeded instances, so the suite is a pure function of its config.

use serde::Serialize;

use crate::linalg::{inner, norm2, norm_inf, norm_sq, spectral_norm, ComplexVector, PowerIteration, C64};
use crate::loss::{
    default_fd_step, fd_gradient_oracle, hessian_bounds, hessian_quadratic_form, lipschitz_constant, loss_value,
    wirtinger_gradient, LossSpec,
};
use crate::measurement::{MeasurementEnsemble, NoiseKind, NoiseSpec};
use crate::rng::{streams, SeededRng};
use crate::solvers::{
    kaczmarz_step, pie_step, run, saf_step, Algorithm, SolverConfig, StepSchedule,
};
use crate::stochastic::{abc_constants, sample_indices, variance_reducing_distribution, SamplingDistribution};

use super::checks::{check_descent, check_second_moment, check_unbiasedness};
use super::{EnsembleSpec, HarnessError, InstanceSpec};

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Scale the analytic gradient by `1 + 1e-3` before comparing it.
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub fd_instances: usize,
    pub fd_eps: Vec<f64>,
    pub unbiased_resamples: usize,
    pub second_moment_points: usize,
    pub second_moment_resamples: usize,
    pub descent_iters: usize,
    pub descent_eps: Vec<f64>,
    pub lipschitz_pairs: usize,
    pub lipschitz_eps: Vec<f64>,
    pub hessian_samples: usize,
    pub hessian_fd_samples: usize,
    pub kaczmarz_steps: usize,
    pub pie_iters: usize,
    pub pie_blocks: Vec<usize>,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            fd_instances: 20,
            fd_eps: vec![1e-2, 1.0],
            unbiased_resamples: 200_000,
            second_moment_points: 10,
            second_moment_resamples: 10_000,
            descent_iters: 500,
            descent_eps: vec![0.0, 0.1],
            lipschitz_pairs: 10_000,
            lipschitz_eps: vec![1e-2, 1.0],
            hessian_samples: 10_000,
            hessian_fd_samples: 100,
            kaczmarz_steps: 10_000,
            pie_iters: 200,
            pie_blocks: vec![1, 4, 16],
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    /// Largest observed value of the checked quantity.
    pub worst: f64,
    /// Pass threshold for `worst`.
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, samples: usize, worst: f64, tolerance: f64, detail: String) -> Self {
        Self { name: name.into(), passed: worst <= tolerance, samples, worst, tolerance, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub const CHECK_NAMES: [&str; 12] = [
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
    "zero_gradient_at_origin",
    "phase_equivariance",
];

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, HarnessError> {
    let checks = vec![
        fd_gradient(cfg)?,
        adjoint(cfg)?,
        unbiasedness(cfg)?,
        second_moment(cfg)?,
        descent(cfg)?,
        lipschitz(cfg)?,
        hessian(cfg)?,
        kaczmarz_nulling(cfg)?,
        pie_saf_equivalence(cfg)?,
        block_norm_identity(cfg)?,
        zero_gradient_at_origin(cfg)?,
        phase_equivariance(cfg)?,
    ];
    Ok(SuiteReport { passed: checks.iter().all(|c| c.passed), seed: cfg.seed, checks })
}

fn rng_for(cfg: &SuiteConfig, name: &str) -> SeededRng {
    let idx = CHECK_NAMES.iter().position(|n| *n == name).expect("known check") as u64;
    SeededRng::new(cfg.seed.wrapping_add(idx), streams::CHECKS)
}

/// Noiseless dense instance with `m` Gaussian rows in blocks of `block_rows`.
pub fn dense_instance(m: usize, d: usize, block_rows: usize, seed: u64) -> Result<MeasurementEnsemble, HarnessError> {
    let ensemble = if block_rows == 1 {
        EnsembleSpec::DenseRows { m, seed }
    } else {
        EnsembleSpec::DenseBlocks { m, block_rows, seed }
    };
    Ok(InstanceSpec { d, ensemble, noise: NoiseSpec::none(), signal_seed: seed }.build()?)
}

/// Noiseless STFT instance with `r` evenly spaced shifts.
pub fn stft_instance(d: usize, r: usize, seed: u64) -> Result<MeasurementEnsemble, HarnessError> {
    Ok(InstanceSpec::reference_stft(d, r, seed).build()?)
}

fn random(d: usize, rng: &mut SeededRng) -> Vec<C64> {
    ComplexVector::random(d, rng).into_inner()
}

fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let diff: Vec<C64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
    norm2(&diff) / norm2(b).max(f64::MIN_POSITIVE)
}

/// Smallest `|A z|_j` relative to the largest; FD is only valid away from zero.
fn min_modulus_ratio(e: &MeasurementEnsemble, z: &[C64]) -> f64 {
    let az = crate::linalg::LinearOperator::apply(e, z);
    let max = norm_inf(&az);
    az.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min) / max
}

pub fn fd_gradient(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "fd_gradient");
    let dims = [4, 8, 16];
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in 0..cfg.fd_instances {
        let d = dims[i % 3];
        let seed = cfg.seed.wrapping_add(i as u64);
        let e = if i % 2 == 0 { dense_instance(3 * d, d, 3, seed)? } else { stft_instance(d, 4, seed)? };
        for &eps in &cfg.fd_eps {
            let spec = LossSpec::new(eps)?;
            let mut z = random(d, &mut rng);
            if eps == 0.0 {
                for _ in 0..100 {
                    if min_modulus_ratio(&e, &z) > 1e-3 {
                        break;
                    }
                    z = random(d, &mut rng);
                }
            }
            let mut g = wirtinger_gradient(&e, &z, &spec)?.gradient;
            if cfg.fault == Some(Fault::Gradient) {
                g.iter_mut().for_each(|v| *v *= 1.0 + 1e-3);
            }
            let fd = fd_gradient_oracle(&e, &z, &spec, default_fd_step(&z))?;
            worst = worst.max(rel_diff(&g, &fd));
            count += 1;
        }
    }
    Ok(CheckResult::new("fd_gradient", count, worst, 1e-6, "relative l2 error of the Wirtinger gradient against central differences".into()))
}

pub fn adjoint(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "adjoint");
    let mut worst = 0.0f64;
    let mut count = 0;
    for e in [dense_instance(12, 4, 3, cfg.seed)?, stft_instance(16, 4, cfg.seed)?] {
        for b in e.blocks() {
            for _ in 0..5 {
                let u = random(e.dim(), &mut rng);
                let v = random(b.rows(), &mut rng);
                let lhs = inner(&b.apply(&u)?, &v);
                let rhs = inner(&u, &b.adjoint(&v)?);
                worst = worst.max((lhs - rhs).norm() / (norm2(&u) * norm2(&v) * b.frobenius_sq().sqrt()));
                count += 1;
            }
        }
    }
    Ok(CheckResult::new("adjoint", count, worst, 1e-12, "<A u, v> - <u, A^* v>, relative".into()))
}

pub fn unbiasedness(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "unbiasedness");
    let e = stft_instance(8, 4, cfg.seed)?;
    let spec = LossSpec::new(0.05)?;
    let mut worst = 0.0f64;
    let mut all = true;
    let cases = [(1, SamplingDistribution::uniform(4)?), (2, SamplingDistribution::new(vec![0.1, 0.2, 0.3, 0.4])?)];
    for (k, dist) in &cases {
        let z = random(8, &mut rng);
        let r = check_unbiasedness(&e, &z, &spec, *k, dist, cfg.unbiased_resamples, &mut rng)?;
        worst = worst.max(r.max_z_score);
        all &= r.passed;
    }
    let mut out = CheckResult::new(
        "unbiasedness",
        cases.len() * cfg.unbiased_resamples,
        worst,
        super::checks::SIGMA_BAND,
        "largest componentwise |mean(g) - grad L| in standard errors, K = 1 and 2".into(),
    );
    out.passed &= all;
    Ok(out)
}

pub fn second_moment(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "second_moment");
    let spec = LossSpec::new(0.0)?;
    let rows = dense_instance(24, 6, 1, cfg.seed)?;
    let st = stft_instance(8, 4, cfg.seed)?;
    let cases = [
        (&rows, 1, variance_reducing_distribution(&rows)?),
        (&st, 2, SamplingDistribution::uniform(4)?),
    ];
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for (e, k, dist) in &cases {
        let abc = abc_constants(e, *k, dist, None)?;
        let pts: Vec<Vec<C64>> = (0..cfg.second_moment_points).map(|_| random(e.dim(), &mut rng)).collect();
        for p in check_second_moment(e, &pts, &spec, *k, dist, &abc, cfg.second_moment_resamples, &mut rng)? {
            // Excess over the bound in standard errors.
            worst = worst.max((p.empirical - p.bound) / p.stderr.max(f64::MIN_POSITIVE));
            count += 1;
        }
    }
    Ok(CheckResult::new(
        "second_moment",
        count,
        worst,
        super::checks::SIGMA_BAND,
        "(E||g||^2 - bound) / stderr at random points, noiseless, eps = 0".into(),
    ))
}

pub fn descent(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "descent");
    let mut violations = 0;
    let mut count = 0;
    for e in [dense_instance(24, 6, 1, cfg.seed)?, stft_instance(16, 4, cfg.seed)?] {
        let norm_a = e.operator_norm(PowerIteration::default())?;
        let mu = 1.0 / (norm_a * norm_a);
        for &eps in &cfg.descent_eps {
            let z0 = random(e.dim(), &mut rng);
            let sc = SolverConfig::new(eps, StepSchedule::constant(mu)?, cfg.descent_iters);
            let tr = crate::solvers::af_run(&e, &z0, &sc)?;
            let r = check_descent(&tr, mu, norm_a);
            violations += r.violations.len();
            count += r.checked;
        }
    }
    Ok(CheckResult::new("descent", count, violations as f64, 0.0, "AF with mu = 1/||A||^2: violated descent steps".into()))
}

pub fn lipschitz(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "lipschitz");
    let instances = [dense_instance(24, 6, 1, cfg.seed)?, stft_instance(8, 4, cfg.seed)?];
    let mut worst = 0.0f64;
    let mut count = 0;
    let per = cfg.lipschitz_pairs.div_ceil(instances.len() * cfg.lipschitz_eps.len().max(1));
    for e in &instances {
        let norm_a = e.operator_norm(PowerIteration::default())?;
        let y = e.flat_measurements().expect("simulated");
        for &eps in &cfg.lipschitz_eps {
            let spec = LossSpec::new(eps)?;
            let lip = lipschitz_constant(&spec, &y, norm_a)?;
            for i in 0..per {
                let z = random(e.dim(), &mut rng);
                // Alternate far pairs with close pairs at log-spaced distances.
                let v: Vec<C64> = if i % 2 == 0 {
                    random(e.dim(), &mut rng)
                } else {
                    let s = 10f64.powf(-4.0 * rng.uniform());
                    z.iter().zip(random(e.dim(), &mut rng)).map(|(a, b)| a + b * s).collect()
                };
                let gz = wirtinger_gradient(e, &z, &spec)?.gradient;
                let gv = wirtinger_gradient(e, &v, &spec)?.gradient;
                let dg: Vec<C64> = gz.iter().zip(&gv).map(|(a, b)| a - b).collect();
                let dz: Vec<C64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
                worst = worst.max(norm2(&dg) / (lip * norm2(&dz)));
                count += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "lipschitz",
        count,
        worst,
        1.0 + 1e-12,
        "||grad L(z) - grad L(v)|| / (L ||z - v||)".into(),
    ))
}

pub fn hessian(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "hessian");
    let instances = [dense_instance(24, 6, 1, cfg.seed)?, stft_instance(8, 4, cfg.seed)?];
    let eps_values = [1e-2, 0.5, 1.0];
    let mut bound_excess = 0.0f64;
    let mut fd_worst = 0.0f64;
    let mut count = 0;
    let cases = instances.len() * eps_values.len();
    let per = cfg.hessian_samples.div_ceil(cases);
    let per_fd = cfg.hessian_fd_samples.div_ceil(cases);
    for e in &instances {
        let norm_a = e.operator_norm(PowerIteration::default())?;
        let y = e.flat_measurements().expect("simulated");
        for &eps in &eps_values {
            let spec = LossSpec::new(eps)?;
            for i in 0..per {
                let z = random(e.dim(), &mut rng);
                let u = random(e.dim(), &mut rng);
                let q = hessian_quadratic_form(e, &z, &u, &spec)?;
                let (lo, hi) = hessian_bounds(&spec, &y, norm_a, norm_sq(&u))?;
                let excess = ((lo - q).max(q - hi)) / (hi - lo);
                bound_excess = bound_excess.max(excess);
                count += 1;
                if i < per_fd {
                    let f = |t: f64| -> f64 {
                        let p: Vec<C64> = z.iter().zip(&u).map(|(a, b)| a + b * t).collect();
                        loss_value(e, &p, &spec).map(|r| r.value).unwrap_or(f64::NAN)
                    };
                    let h = 1e-3;
                    let second = |h: f64| (f(h) + f(-h) - 2.0 * f(0.0)) / (h * h);
                    // Richardson extrapolation cancels the O(h^2) term.
                    let fd = (4.0 * second(h / 2.0) - second(h)) / 3.0;
                    fd_worst = fd_worst.max((fd - q).abs() / q.abs().max(1e-8 * hi));
                }
            }
        }
    }
    // Bound excess is relative to the bound width; anything above rounding fails.
    let mut out = CheckResult::new(
        "hessian",
        count,
        fd_worst,
        1e-4,
        format!("worst relative FD second-difference mismatch; worst bound excess {bound_excess:.3e}"),
    );
    out.passed &= bound_excess <= 1e-12;
    Ok(out)
}

pub fn kaczmarz_nulling(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "kaczmarz_nulling");
    let clean = dense_instance(32, 8, 1, cfg.seed)?;
    let noisy = InstanceSpec {
        d: 8,
        ensemble: EnsembleSpec::DenseRows { m: 32, seed: cfg.seed },
        noise: NoiseSpec { kind: NoiseKind::Poisson { scale: 10.0 }, seed: cfg.seed },
        signal_seed: cfg.seed,
    }
    .build()?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for e in [&clean, &noisy] {
        let dist = variance_reducing_distribution(e)?;
        let y = e.measurements().expect("simulated");
        let mut z = random(8, &mut rng);
        for _ in 0..cfg.kaczmarz_steps.div_ceil(2) {
            let r = dist.sample(&mut rng);
            z = kaczmarz_step(e, &z, r)?;
            let az = e.block(r).apply(&z)?[0];
            let root = y[r][0].sqrt();
            worst = worst.max((az.norm() - root).abs() / (1.0 + root));
            count += 1;
        }
    }
    Ok(CheckResult::new("kaczmarz_nulling", count, worst, 1e-10, "||(A z+)_r| - sqrt(y_r)| / (1 + sqrt(y_r))".into()))
}

pub fn pie_saf_equivalence(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "pie_saf_equivalence");
    let d = 16;
    let spec = LossSpec::new(0.0)?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for &r_blocks in &cfg.pie_blocks {
        let e = stft_instance(d, r_blocks, cfg.seed.wrapping_add(r_blocks as u64))?;
        let dist = SamplingDistribution::uniform(r_blocks)?;
        let w_inf2 = norm_inf(e.stft_window().expect("stft")).powi(2);
        for alpha in [StepSchedule::polynomial(1.0, 0.25)?, StepSchedule::constant(0.5)?] {
            let z0 = random(d, &mut rng);
            let (mut zp, mut zs) = (z0.clone(), z0);
            for t in 0..cfg.pie_iters {
                let a = alpha.value(t as u64);
                let r = sample_indices(&dist, 1, &mut rng);
                zp = pie_step(&e, &zp, r[0], a)?;
                let mu = a * dist.prob(r[0]) / (d as f64 * w_inf2);
                zs = saf_step(&e, &zs, &spec, &r, &dist, mu)?;
                let scale = norm_inf(&zs).max(f64::MIN_POSITIVE);
                let dev = zp.iter().zip(&zs).map(|(p, s)| (p - s).norm()).fold(0.0, f64::max) / scale;
                worst = worst.max(dev);
                count += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "pie_saf_equivalence",
        count,
        worst,
        1e-12,
        "max_j |pie_j - saf_j| / max_j |saf_j| along lockstep trajectories".into(),
    ))
}

pub fn block_norm_identity(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "block_norm_identity");
    let mut worst = 0.0f64;
    let mut count = 0;
    for d in [8, 16, 32] {
        let w = ComplexVector::random(d, &mut rng);
        let shifts: Vec<i64> = (0..4).map(|k| (k * d / 4) as i64).collect();
        let e = MeasurementEnsemble::stft(&w, &shifts)?;
        let expect = d as f64 * norm_inf(&w).powi(2);
        for b in e.blocks() {
            let n = spectral_norm(b, PowerIteration::default())?;
            worst = worst.max((n * n - expect).abs() / expect);
            count += 1;
        }
    }
    Ok(CheckResult::new("block_norm_identity", count, worst, 1e-8, "|power-iteration ||A_r||^2 - d ||w||_inf^2| / d ||w||_inf^2".into()))
}

pub fn zero_gradient_at_origin(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for e in [dense_instance(12, 4, 3, cfg.seed)?, stft_instance(16, 4, cfg.seed)?] {
        let zero = vec![C64::new(0.0, 0.0); e.dim()];
        for eps in [0.0, 0.1, 1.0] {
            let spec = LossSpec::new(eps)?;
            let g = wirtinger_gradient(&e, &zero, &spec)?;
            worst = worst.max(norm2(&g.gradient));
            count += 1;
        }
    }
    Ok(CheckResult::new("zero_gradient_at_origin", count, worst, 0.0, "||grad L_eps(0)||".into()))
}

pub fn phase_equivariance(cfg: &SuiteConfig) -> Result<CheckResult, HarnessError> {
    let mut rng = rng_for(cfg, "phase_equivariance");
    let dense = dense_instance(16, 4, 1, cfg.seed)?;
    let st = stft_instance(8, 4, cfg.seed)?;
    let sched = StepSchedule::polynomial(0.05, 0.25)?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (alg, e) in [
        (Algorithm::Af, &dense),
        (Algorithm::Saf, &dense),
        (Algorithm::Kaczmarz, &dense),
        (Algorithm::Pie, &st),
    ] {
        let z0 = random(e.dim(), &mut rng);
        let phase = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.uniform());
        let sc = SolverConfig::new(0.1, sched, 100).with_batch(2).with_seed(cfg.seed, 3);
        let base = run(alg, e, &z0, &sc)?;
        let rotated: Vec<C64> = z0.iter().map(|v| v * phase).collect();
        let rot = run(alg, e, &rotated, &sc)?;
        let expect: Vec<C64> = base.final_iterate.iter().map(|v| v * phase).collect();
        let scale = norm_inf(&expect).max(f64::MIN_POSITIVE);
        let dev = rot.final_iterate.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
        worst = worst.max(dev);
        count += 1;
    }
    Ok(CheckResult::new("phase_equivariance", count, worst, 1e-10, "max_j |run(c z0)_j - c run(z0)_j|, relative".into()))
}
