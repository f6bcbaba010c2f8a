//! Block sampling and the unbiased stochastic gradient
//! `g(z) = (1/K) sum_k grad L_{eps,r_k}(z) / p_{r_k}` with `r_k` i.i.d. from `p`.

use thiserror::Error;

use crate::linalg::{LinalgError, PowerIteration, C64};
use crate::loss::{block_gradient_unchecked, check_dim, measurements, LossError, LossSpec};
use crate::measurement::MeasurementEnsemble;
pub use crate::rng::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("distribution needs at least one block")]
    Empty,
    #[error("probability p[{index}] = {value} outside (0, 1)")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("block {0} has zero norm and cannot be sampled")]
    ZeroBlock(usize),
    #[error("distribution has {got} entries, ensemble has {expected} blocks")]
    Length { expected: usize, got: usize },
    #[error("index {index} out of range for {blocks} blocks")]
    Index { index: usize, blocks: usize },
    #[error("sample size K must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Sampling probabilities over blocks with precomputed prefix sums.
///
/// Every `p_r` lies strictly inside `(0, 1)`, except the single-block case
/// where `p = (1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    p: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SamplingDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self, SamplingError> {
        if p.is_empty() {
            return Err(SamplingError::Empty);
        }
        let single = p.len() == 1;
        for (index, &value) in p.iter().enumerate() {
            let ok = value.is_finite() && value > 0.0 && (value < 1.0 || single);
            if !ok {
                return Err(SamplingError::OutOfRange { index, value });
            }
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SamplingError::NotNormalized(total));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = p
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        // pin the last edge so inverse-CDF never falls off the end
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self { p, cumulative })
    }

    pub fn uniform(blocks: usize) -> Result<Self, SamplingError> {
        if blocks == 0 {
            return Err(SamplingError::Empty);
        }
        Self::new(vec![1.0 / blocks as f64; blocks])
    }

    /// `p_r = w_r / sum(w)`.
    pub fn from_weights(weights: &[f64]) -> Result<Self, SamplingError> {
        if let Some(r) = weights.iter().position(|&w| !(w > 0.0)) {
            return Err(SamplingError::ZeroBlock(r));
        }
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // renormalize away accumulated rounding
        let s: f64 = p.iter().sum();
        Self::new(p.into_iter().map(|v| v / s).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn prob(&self, r: usize) -> f64 {
        self.p[r]
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.p[0];
        self.p.iter().all(|&v| v == first)
    }

    /// Inverse-CDF draw of one zero-based block index.
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        self.cumulative.partition_point(|&c| c <= u).min(self.p.len() - 1)
    }
}

/// `K` i.i.d. draws with replacement.
pub fn sample_indices(dist: &SamplingDistribution, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..k).map(|_| dist.sample(rng)).collect()
}

pub(crate) fn stochastic_gradient_unchecked(
    e: &MeasurementEnsemble,
    y: &[Vec<f64>],
    z: &[C64],
    eps: f64,
    indices: &[usize],
    dist: &SamplingDistribution,
) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); z.len()];
    let mut clamps = 0;
    let inv_k = 1.0 / indices.len() as f64;
    for &r in indices {
        let (g, _) = block_gradient_unchecked(e.block(r), &y[r], z, eps, &mut clamps);
        let w = inv_k / dist.prob(r);
        for (acc, v) in out.iter_mut().zip(g) {
            *acc += v * w;
        }
    }
    out
}

pub fn stochastic_gradient(
    e: &MeasurementEnsemble,
    z: &[C64],
    spec: &LossSpec,
    indices: &[usize],
    dist: &SamplingDistribution,
) -> Result<Vec<C64>, SamplingError> {
    check_dim(e, z)?;
    let y = measurements(e)?;
    check_dist(e, dist)?;
    if indices.is_empty() {
        return Err(SamplingError::ZeroBatch);
    }
    if let Some(&index) = indices.iter().find(|&&r| r >= e.num_blocks()) {
        return Err(SamplingError::Index { index, blocks: e.num_blocks() });
    }
    Ok(stochastic_gradient_unchecked(e, y, z, spec.eps(), indices, dist))
}

pub(crate) fn check_dist(e: &MeasurementEnsemble, dist: &SamplingDistribution) -> Result<(), SamplingError> {
    if dist.len() != e.num_blocks() {
        return Err(SamplingError::Length { expected: e.num_blocks(), got: dist.len() });
    }
    Ok(())
}

/// Known (or assumed) infima of the total and per-block losses.
#[derive(Debug, Clone, PartialEq)]
pub struct InfimumBounds {
    pub total: f64,
    pub per_block: Vec<f64>,
}

/// Constants of the expected-squared-norm bound
/// `E ||g||^2 <= alpha (L - L_inf) + beta ||grad L||^2 + delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcConstants {
    pub alpha: f64,
    pub beta: f64,
    pub delta_upper: f64,
    pub block_norms_sq: Vec<f64>,
}

/// `alpha = (1/K) max_r ||A_r||^2 / p_r`, `beta = 1 - 1/K`, and
/// `delta = alpha [L_inf - sum_r L_{r,inf}]` from the supplied infima
/// (zero when none are given).
pub fn abc_constants(
    e: &MeasurementEnsemble,
    k: usize,
    dist: &SamplingDistribution,
    inf_bounds: Option<&InfimumBounds>,
) -> Result<AbcConstants, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroBatch);
    }
    check_dist(e, dist)?;
    let block_norms_sq = e.block_norms_sq(PowerIteration::default())?;
    let kf = k as f64;
    let alpha = block_norms_sq
        .iter()
        .zip(dist.probabilities())
        .map(|(n, p)| n / p)
        .fold(0.0, f64::max)
        / kf;
    let beta = 1.0 - 1.0 / kf;
    let delta_upper = match inf_bounds {
        Some(b) => {
            if b.per_block.len() != e.num_blocks() {
                return Err(SamplingError::Length { expected: e.num_blocks(), got: b.per_block.len() });
            }
            (alpha * (b.total - b.per_block.iter().sum::<f64>())).max(0.0)
        }
        None => 0.0,
    };
    Ok(AbcConstants { alpha, beta, delta_upper, block_norms_sq })
}

/// `p_r` proportional to `||A_r||^2`. For single-row blocks this is
/// `||A_(r)||_2^2 / ||A||_F^2`; for general blocks it equalizes
/// `||A_r||^2 / p_r` and so minimizes `alpha`.
pub fn variance_reducing_distribution(e: &MeasurementEnsemble) -> Result<SamplingDistribution, SamplingError> {
    let norms = e.block_norms_sq(PowerIteration::default())?;
    SamplingDistribution::from_weights(&norms)
}
