//! Empirical checks of the descent, unbiasedness, second-moment and rate
//! statements on traces and sampled gradients.

use serde::Serialize;

use crate::linalg::{norm2, norm_sq, C64};
use crate::loss::{check_dim, measurements, wirtinger_gradient, LossSpec};
use crate::measurement::MeasurementEnsemble;
use crate::rng::SeededRng;
use crate::solvers::{RunTrace, SolverError, StepSchedule};
use crate::stochastic::{check_dist, sample_indices, stochastic_gradient_unchecked, AbcConstants, SamplingDistribution};

use super::HarnessError;

/// Relative slack allowed on each descent inequality.
pub const DESCENT_SLACK: f64 = 1e-10;
/// Width of the statistical bands, in standard errors.
pub const SIGMA_BAND: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentViolation {
    pub t: usize,
    pub loss_next: f64,
    /// `L(z^t) - mu ||grad L(z^t)||^2`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub checked: usize,
    /// `mu <= 1/||A||^2`; violations are only meaningful when this holds.
    pub hypothesis_holds: bool,
    pub max_decrease: f64,
    pub violations: Vec<DescentViolation>,
}

impl DescentReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `L(z^{t+1}) <= L(z^t) - mu ||grad L(z^t)||^2` on consecutive
/// records. The slack is `1e-10` relative to `L(z^t)`, floored at machine
/// precision relative to `L(z^0)`.
pub fn check_descent(trace: &RunTrace, mu: f64, norm_a: f64) -> DescentReport {
    let l0 = trace.records.first().map_or(0.0, |r| r.loss);
    let mut report = DescentReport {
        checked: 0,
        hypothesis_holds: mu * norm_a * norm_a <= 1.0 + 1e-12,
        max_decrease: 0.0,
        violations: Vec::new(),
    };
    for w in trace.records.windows(2) {
        if w[1].t != w[0].t + 1 {
            continue;
        }
        report.checked += 1;
        let bound = w[0].loss - mu * w[0].grad_norm * w[0].grad_norm;
        let slack = DESCENT_SLACK * w[0].loss.max(f64::EPSILON * l0);
        report.max_decrease = report.max_decrease.max(w[0].loss - w[1].loss);
        if w[1].loss > bound + slack {
            report.violations.push(DescentViolation { t: w[0].t, loss_next: w[1].loss, bound });
        }
    }
    report
}

fn prepare(
    e: &MeasurementEnsemble,
    k: usize,
    dist: &SamplingDistribution,
    resamples: usize,
) -> Result<(), HarnessError> {
    measurements(e)?;
    check_dist(e, dist)?;
    if k == 0 || resamples < 2 {
        return Err(HarnessError::Solver(SolverError::Config("need K >= 1 and at least 2 resamples".into())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentPoint {
    pub loss: f64,
    pub grad_norm_sq: f64,
    /// Sample mean of `||g||^2`.
    pub empirical: f64,
    pub stderr: f64,
    /// `alpha L + beta ||grad L||^2 + delta` with `L_inf = 0`.
    pub bound: f64,
    pub passed: bool,
}

/// Monte-Carlo estimate of `E ||g_eps(z)||^2` at each point against the
/// second-moment bound, passing when `empirical <= bound + 5 stderr`.
#[allow(clippy::too_many_arguments)]
pub fn check_second_moment(
    e: &MeasurementEnsemble,
    points: &[Vec<C64>],
    spec: &LossSpec,
    k: usize,
    dist: &SamplingDistribution,
    abc: &AbcConstants,
    resamples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<SecondMomentPoint>, HarnessError> {
    prepare(e, k, dist, resamples)?;
    let y = measurements(e)?;
    let n = resamples as f64;
    let mut out = Vec::with_capacity(points.len());
    for z in points {
        check_dim(e, z)?;
        let full = wirtinger_gradient(e, z, spec)?;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..resamples {
            let idx = sample_indices(dist, k, rng);
            let v = norm_sq(&stochastic_gradient_unchecked(e, y, z, spec.eps(), &idx, dist));
            s += v;
            s2 += v * v;
        }
        let empirical = s / n;
        let var = ((s2 / n - empirical * empirical) * n / (n - 1.0)).max(0.0);
        let stderr = (var / n).sqrt();
        let grad_norm_sq = norm_sq(&full.gradient);
        let bound = abc.alpha * full.loss + abc.beta * grad_norm_sq + abc.delta_upper;
        let passed = empirical <= bound + SIGMA_BAND * stderr + 1e-12 * bound.abs();
        out.push(SecondMomentPoint { loss: full.loss, grad_norm_sq, empirical, stderr, bound, passed });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessReport {
    pub resamples: usize,
    /// Largest `|mean - grad| / stderr` over real and imaginary parts.
    pub max_z_score: f64,
    /// Largest absolute deviation in a component whose sample variance is zero.
    pub max_exact_deviation: f64,
    pub passed: bool,
}

/// Componentwise comparison of the sample mean of `g_eps(z)` with the full
/// gradient, passing within 5 standard errors.
#[allow(clippy::too_many_arguments)]
pub fn check_unbiasedness(
    e: &MeasurementEnsemble,
    z: &[C64],
    spec: &LossSpec,
    k: usize,
    dist: &SamplingDistribution,
    resamples: usize,
    rng: &mut SeededRng,
) -> Result<UnbiasednessReport, HarnessError> {
    prepare(e, k, dist, resamples)?;
    check_dim(e, z)?;
    let y = measurements(e)?;
    let full = wirtinger_gradient(e, z, spec)?.gradient;
    let d = z.len();
    let mut s = vec![0.0; 2 * d];
    let mut s2 = vec![0.0; 2 * d];
    for _ in 0..resamples {
        let idx = sample_indices(dist, k, rng);
        let g = stochastic_gradient_unchecked(e, y, z, spec.eps(), &idx, dist);
        for (j, v) in g.iter().enumerate() {
            s[2 * j] += v.re;
            s[2 * j + 1] += v.im;
            s2[2 * j] += v.re * v.re;
            s2[2 * j + 1] += v.im * v.im;
        }
    }
    let n = resamples as f64;
    let scale = 1.0 + norm2(&full);
    let (mut max_z, mut max_exact) = (0.0f64, 0.0f64);
    for j in 0..2 * d {
        let target = if j % 2 == 0 { full[j / 2].re } else { full[j / 2].im };
        let mean = s[j] / n;
        let var = ((s2[j] / n - mean * mean) * n / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let dev = (mean - target).abs();
        // Rounding in the running sums makes a constant component look
        // slightly random; treat tiny spreads as exact.
        if se <= 1e-12 * scale {
            max_exact = max_exact.max(dev);
        } else {
            max_z = max_z.max(dev / se);
        }
    }
    let passed = max_z <= SIGMA_BAND && max_exact <= 1e-10 * scale;
    Ok(UnbiasednessReport { resamples, max_z_score: max_z, max_exact_deviation: max_exact, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFit {
    Slope {
        slope: f64,
        intercept: f64,
        /// `theta/2 - 1/4` for polynomial schedules.
        threshold: Option<f64>,
        points: usize,
    },
    /// The curve reached zero, so no rate can be fitted.
    AlreadyConverged,
}

impl RateFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            RateFit::Slope { slope, .. } => Some(*slope),
            RateFit::AlreadyConverged => None,
        }
    }
}

/// Least-squares slope of `log curve` against `log t` over the final decade
/// `t >= t_max / 10` (and `t >= 1`).
pub fn fit_rate(t: &[usize], curve: &[f64], schedule: &StepSchedule) -> Result<RateFit, HarnessError> {
    if t.len() != curve.len() || t.len() < 100 {
        return Err(HarnessError::ShortCurve(t.len().min(curve.len())));
    }
    let t_max = *t.iter().max().expect("non-empty");
    let lo = (t_max / 10).max(1);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(curve)
        .filter(|(&ti, _)| ti >= lo)
        .map(|(&ti, &v)| ((ti as f64).ln(), v))
        .collect();
    if pts.iter().any(|&(_, v)| v <= 0.0) {
        return Ok(RateFit::AlreadyConverged);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(RateFit::Slope {
        slope,
        intercept: my - slope * mx,
        threshold: schedule.theta().map(|th| th / 2.0 - 0.25),
        points: pts.len(),
    })
}
