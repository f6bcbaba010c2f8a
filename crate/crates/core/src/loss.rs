//! Smoothed amplitude loss, its Wirtinger gradient and curvature.
//!
//! `L_eps(z) = sum_r || sqrt(|A_r z|^2 + eps) - sqrt(y^r + eps) ||_2^2`
//!
//! The gradient follows the Wirtinger convention `grad f = (df/dz)^*`, so
//! `f(z + v) ~ f(z) + 2 Re <grad f(z), v>`.
//!
//! Measured intensities can be negative under additive noise. Every
//! `sqrt(y_j + eps)` is evaluated as `sqrt(max(y_j + eps, 0))` and the number
//! of clamped entries is reported alongside the result.

use thiserror::Error;

use crate::linalg::{norm_inf, C64};
use crate::measurement::{Block, MeasurementEnsemble};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("ensemble has no measurements")]
    MissingMeasurements,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("smoothing parameter must be finite and >= 0, got {0}")]
    BadEps(f64),
    #[error("{0} is undefined for eps = 0")]
    NeedsPositiveEps(&'static str),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    eps: f64,
}

impl LossSpec {
    pub fn new(eps: f64) -> Result<Self, LossError> {
        if eps.is_finite() && eps >= 0.0 {
            Ok(Self { eps })
        } else {
            Err(LossError::BadEps(eps))
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub per_block: Vec<f64>,
    /// Entries where `y_j + eps < 0` was clamped to zero.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub gradient: Vec<C64>,
    pub loss: f64,
    pub per_block_losses: Vec<f64>,
    pub clamped: usize,
}

#[inline]
fn clamped_sqrt(v: f64, clamps: &mut usize) -> f64 {
    if v < 0.0 {
        *clamps += 1;
        0.0
    } else {
        v.sqrt()
    }
}

pub(crate) fn measurements(e: &MeasurementEnsemble) -> Result<&[Vec<f64>], LossError> {
    e.measurements().ok_or(LossError::MissingMeasurements)
}

pub(crate) fn check_dim(e: &MeasurementEnsemble, z: &[C64]) -> Result<(), LossError> {
    if z.len() != e.dim() {
        return Err(LossError::Dimension { expected: e.dim(), got: z.len() });
    }
    Ok(())
}

/// Loss of one block given `A_r z`.
fn block_loss(az: &[C64], y: &[f64], eps: f64, clamps: &mut usize) -> f64 {
    az.iter()
        .zip(y)
        .map(|(a, &yj)| {
            let diff = (a.norm_sqr() + eps).sqrt() - clamped_sqrt(yj + eps, clamps);
            diff * diff
        })
        .sum()
}

/// `A_r z - sqrt(y + eps) * A_r z / sqrt(|A_r z|^2 + eps)`, with `sgn` at `eps = 0`.
/// Written as `A_r z (s - sqrt(y + eps)) / s` with `s = sqrt(|A_r z|^2 + eps)`,
/// so a consistent entry contributes exactly zero.
fn block_residual(az: &[C64], y: &[f64], eps: f64, clamps: &mut usize) -> Vec<C64> {
    az.iter()
        .zip(y)
        .map(|(&a, &yj)| {
            let root_y = clamped_sqrt(yj + eps, clamps);
            let s = (a.norm_sqr() + eps).sqrt();
            if s == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                a * ((s - root_y) / s)
            }
        })
        .collect()
}

/// Gradient and loss of block `r`: `A_r^* (A_r z - sqrt(y^r+eps) o A_r z / sqrt(|A_r z|^2+eps))`.
pub(crate) fn block_gradient_unchecked(
    block: &Block,
    y: &[f64],
    z: &[C64],
    eps: f64,
    clamps: &mut usize,
) -> (Vec<C64>, f64) {
    let az = block.forward(z);
    let mut scratch = 0;
    let loss = block_loss(&az, y, eps, &mut scratch);
    let res = block_residual(&az, y, eps, clamps);
    (block.backward(&res), loss)
}

/// `grad L_{eps,r}(z)` for a single block.
pub fn block_gradient(
    e: &MeasurementEnsemble,
    r: usize,
    z: &[C64],
    spec: &LossSpec,
) -> Result<Vec<C64>, LossError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    let mut clamps = 0;
    Ok(block_gradient_unchecked(e.block(r), &y[r], z, spec.eps, &mut clamps).0)
}

pub fn loss_value(e: &MeasurementEnsemble, z: &[C64], spec: &LossSpec) -> Result<LossReport, LossError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    let mut clamped = 0;
    let per_block: Vec<f64> = e
        .blocks()
        .iter()
        .zip(y)
        .map(|(b, yr)| block_loss(&b.forward(z), yr, spec.eps, &mut clamped))
        .collect();
    Ok(LossReport { value: per_block.iter().sum(), per_block, clamped })
}

/// Full Wirtinger gradient, summed over blocks in index order.
pub fn wirtinger_gradient(
    e: &MeasurementEnsemble,
    z: &[C64],
    spec: &LossSpec,
) -> Result<GradientReport, LossError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    let mut clamped = 0;
    let mut gradient = vec![C64::new(0.0, 0.0); e.dim()];
    let mut per_block_losses = Vec::with_capacity(e.num_blocks());
    for (b, yr) in e.blocks().iter().zip(y) {
        let (g, l) = block_gradient_unchecked(b, yr, z, spec.eps, &mut clamped);
        for (acc, v) in gradient.iter_mut().zip(g) {
            *acc += v;
        }
        per_block_losses.push(l);
    }
    Ok(GradientReport { gradient, loss: per_block_losses.iter().sum(), per_block_losses, clamped })
}

fn y_plus_eps_inf(y: &[f64], eps: f64) -> f64 {
    y.iter().map(|v| (v + eps).abs()).fold(0.0, f64::max)
}

/// `L = ||A||^2 max{1, ||y + eps||_inf^{1/2} eps^{-1/2} - 1}`.
pub fn lipschitz_constant(spec: &LossSpec, y: &[f64], norm_a: f64) -> Result<f64, LossError> {
    let eps = spec.eps;
    if eps == 0.0 {
        return Err(LossError::NeedsPositiveEps("the Lipschitz constant"));
    }
    let ratio = (y_plus_eps_inf(y, eps) / eps).sqrt() - 1.0;
    Ok(norm_a * norm_a * ratio.max(1.0))
}

/// Lower and upper bounds on `[u; conj u]^* H [u; conj u]`:
/// `-2 (||y+eps||_inf^{1/2} eps^{-1/2} - 1) ||A||^2 ||u||^2` and `2 ||A||^2 ||u||^2`.
pub fn hessian_bounds(spec: &LossSpec, y: &[f64], norm_a: f64, u_norm_sq: f64) -> Result<(f64, f64), LossError> {
    let eps = spec.eps;
    if eps == 0.0 {
        return Err(LossError::NeedsPositiveEps("the Hessian"));
    }
    let ratio = (y_plus_eps_inf(y, eps) / eps).sqrt() - 1.0;
    let a2 = norm_a * norm_a;
    Ok((-2.0 * ratio * a2 * u_norm_sq, 2.0 * a2 * u_norm_sq))
}

/// Quadratic form of the Wirtinger Hessian of `L_eps` at `z` in direction `u`,
/// equal to the second derivative of `h -> L_eps(z + h u)` at `h = 0`.
pub fn hessian_quadratic_form(
    e: &MeasurementEnsemble,
    z: &[C64],
    u: &[C64],
    spec: &LossSpec,
) -> Result<f64, LossError> {
    let eps = spec.eps;
    if eps == 0.0 {
        return Err(LossError::NeedsPositiveEps("the Hessian"));
    }
    check_dim(e, z)?;
    check_dim(e, u)?;
    let y = measurements(e)?;
    let mut clamps = 0;
    let mut total = 0.0;
    for (b, yr) in e.blocks().iter().zip(y) {
        let az = b.forward(z);
        let au = b.forward(u);
        for ((a, v), &yj) in az.iter().zip(&au).zip(yr) {
            let root_y = clamped_sqrt(yj + eps, &mut clamps);
            let a2 = a.norm_sqr();
            let v2 = v.norm_sqr();
            let denom = (a2 + eps).powf(1.5);
            let cross = (a * a * (v.conj() * v.conj())).re;
            total += 2.0 * (1.0 - eps * root_y / denom) * v2 + root_y / denom * (cross - a2 * v2);
        }
    }
    Ok(total)
}

/// `h = 1e-6 (1 + ||z||_inf)`.
pub fn default_fd_step(z: &[C64]) -> f64 {
    1e-6 * (1.0 + norm_inf(z))
}

/// Central-difference Wirtinger gradient built only from loss evaluations:
/// coordinate `j` is `(dL/d re z_j + i dL/d im z_j) / 2`.
pub fn fd_gradient_oracle(
    e: &MeasurementEnsemble,
    z: &[C64],
    spec: &LossSpec,
    h: f64,
) -> Result<Vec<C64>, LossError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(LossError::BadStep(h));
    }
    check_dim(e, z)?;
    let f = |p: &[C64]| loss_value(e, p, spec).map(|r| r.value);
    let mut probe = z.to_vec();
    let mut out = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let mut partial = [0.0; 2];
        for (k, dir) in [C64::new(h, 0.0), C64::new(0.0, h)].into_iter().enumerate() {
            probe[j] = z[j] + dir;
            let fp = f(&probe)?;
            probe[j] = z[j] - dir;
            let fm = f(&probe)?;
            partial[k] = (fp - fm) / (2.0 * h);
        }
        probe[j] = z[j];
        out.push(C64::new(partial[0], partial[1]) * 0.5);
    }
    Ok(out)
}
