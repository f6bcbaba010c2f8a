//! Iteration budgets implied by the constant-step and decaying-step
//! convergence bounds.

use serde::{Serialize, Serializer};

use super::SolverError;
use crate::stochastic::AbcConstants;

/// A step-size or iteration limit that may be absent (a `1/0` term).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Unconstrained,
}

impl Bound {
    pub fn min(self, other: Bound) -> Bound {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a.min(b)),
            (Bound::Finite(a), Bound::Unconstrained) | (Bound::Unconstrained, Bound::Finite(a)) => Bound::Finite(a),
            _ => Bound::Unconstrained,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            Bound::Unconstrained => None,
        }
    }

    /// `1 / x`, unconstrained when `x == 0`.
    fn recip(x: f64) -> Bound {
        if x > 0.0 {
            Bound::Finite(1.0 / x)
        } else {
            Bound::Unconstrained
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::Finite(v) => s.serialize_f64(*v),
            Bound::Unconstrained => s.serialize_str("unconstrained"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantBudget {
    /// Smallest integer `T` meeting every iteration condition.
    pub iterations: u64,
    /// The unrounded maximum of the three iteration terms.
    pub iterations_real: f64,
    pub step: Bound,
}

fn ceil_count(x: f64) -> u64 {
    if x <= 0.0 {
        0
    } else if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x.ceil() as u64
    }
}

fn check_gamma(gamma: f64) -> Result<(), SolverError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(SolverError::Config(format!("gamma must be positive, got {gamma}")))
    }
}

/// Step bound `min{1/(sqrt(alpha T) ||A||), 1/(beta ||A||^2), gamma^2/(2 delta ||A||^2)}`.
pub fn constant_step_bound(gamma: f64, abc: &AbcConstants, norm_a: f64, iterations: u64) -> Bound {
    let a2 = norm_a * norm_a;
    let alpha_term = Bound::recip((abc.alpha * iterations as f64).sqrt() * norm_a);
    let beta_term = Bound::recip(abc.beta * a2);
    let delta_term = Bound::recip(2.0 * abc.delta_upper * a2 / (gamma * gamma));
    alpha_term.min(beta_term).min(delta_term)
}

/// Budget when the step is chosen as the minimum in the constant-step bound:
/// `T >= max{16 alpha ||A||^2 D^2 / gamma^4, 4 beta ||A||^2 D / gamma^2, 8 delta ||A||^2 D / gamma^2}`
/// where `D = L(z0) - L_inf`. Terms with a zero constant drop out.
pub fn theorem_budget_constant(
    gamma: f64,
    loss_gap: f64,
    abc: &AbcConstants,
    norm_a: f64,
) -> Result<ConstantBudget, SolverError> {
    check_gamma(gamma)?;
    let a2 = norm_a * norm_a;
    let g2 = gamma * gamma;
    let t_alpha = 16.0 * abc.alpha * a2 * loss_gap * loss_gap / (g2 * g2);
    let t_beta = 4.0 * abc.beta * a2 * loss_gap / g2;
    let t_delta = 8.0 * abc.delta_upper * a2 * loss_gap / g2;
    let iterations_real = t_alpha.max(t_beta).max(t_delta).max(0.0);
    let iterations = ceil_count(iterations_real);
    Ok(ConstantBudget { iterations, iterations_real, step: constant_step_bound(gamma, abc, norm_a, iterations) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedStepBudget {
    /// `ceil(4 D / (gamma^2 mu))`.
    pub iterations: u64,
    pub step_bound: Bound,
    /// Whether `mu` respects the step bound at this `T`.
    pub step_admissible: bool,
}

/// Budget for a step size fixed in advance (e.g. the Kaczmarz step `1/||A||_F^2`).
pub fn fixed_step_budget(
    gamma: f64,
    loss_gap: f64,
    abc: &AbcConstants,
    norm_a: f64,
    mu: f64,
) -> Result<FixedStepBudget, SolverError> {
    check_gamma(gamma)?;
    if !(mu > 0.0) {
        return Err(SolverError::Config(format!("step size must be positive, got {mu}")));
    }
    let iterations = ceil_count(4.0 * loss_gap / (gamma * gamma * mu));
    let step_bound = constant_step_bound(gamma, abc, norm_a, iterations);
    let step_admissible = match step_bound {
        Bound::Finite(b) => mu <= b * (1.0 + 1e-12),
        Bound::Unconstrained => true,
    };
    Ok(FixedStepBudget { iterations, step_bound, step_admissible })
}

/// `ceil(||A||_F^2 / (4 ||A||^2))`, the Kaczmarz budget for
/// `gamma = 4 ||A|| sqrt(L_0(z0))` with variance-reducing sampling.
pub fn kaczmarz_budget(norm_fro: f64, norm_a: f64) -> u64 {
    ceil_count(norm_fro * norm_fro / (4.0 * norm_a * norm_a))
}

/// `T = ceil([c^2 mu^-1 gamma^-2 (1/2 - theta) + 1]^(2/(1 - 2 theta)) - 1)` for
/// the schedule `mu / (1+t)^(1/2+theta)`.
pub fn corollary_budget_decaying(gamma: f64, c_sq: f64, mu: f64, theta: f64) -> Result<u64, SolverError> {
    check_gamma(gamma)?;
    if !(theta > 0.0 && theta < 0.5) {
        return Err(SolverError::Config(format!("theta must lie in (0, 1/2), got {theta}")));
    }
    if !(mu > 0.0) {
        return Err(SolverError::Config(format!("step size must be positive, got {mu}")));
    }
    let base = c_sq / (mu * gamma * gamma) * (0.5 - theta) + 1.0;
    Ok(ceil_count(base.powf(2.0 / (1.0 - 2.0 * theta)) - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc(alpha: f64, beta: f64, delta: f64) -> AbcConstants {
        AbcConstants { alpha, beta, delta_upper: delta, block_norms_sq: vec![] }
    }

    #[test]
    fn gradient_descent_special_case() {
        let norm_a = 2.5;
        let gap = 7.0;
        let gamma = 0.3;
        let b = theorem_budget_constant(gamma, gap, &abc(0.0, 1.0, 0.0), norm_a).unwrap();
        let expect = 4.0 * norm_a * norm_a * gap / (gamma * gamma);
        assert!((b.iterations_real - expect).abs() <= 1e-12 * expect);
        assert_eq!(b.iterations, expect.ceil() as u64);
        assert_eq!(b.step, Bound::Finite(1.0 / (norm_a * norm_a)));
    }

    #[test]
    fn kaczmarz_setting() {
        let (fro, norm_a, l0) = (20.0f64, 3.0f64, 5.0f64);
        let gamma = 4.0 * norm_a * l0.sqrt();
        let k = abc(fro * fro, 0.0, 0.0);
        let fixed = fixed_step_budget(gamma, l0, &k, norm_a, 1.0 / (fro * fro)).unwrap();
        let expect = (fro * fro / (4.0 * norm_a * norm_a)).ceil() as u64;
        assert_eq!(fixed.iterations, expect);
        assert_eq!(kaczmarz_budget(fro, norm_a), expect);
        assert!(fixed.step_admissible);
        // with the optimal step the quartic term gives a quarter of that
        let opt = theorem_budget_constant(gamma, l0, &k, norm_a).unwrap();
        assert!((opt.iterations_real - fro * fro / (16.0 * norm_a * norm_a)).abs() < 1e-9);
    }

    #[test]
    fn doubling_gamma_shrinks_alpha_budget_sixteenfold() {
        let k = abc(3.0, 0.0, 0.0);
        let a = theorem_budget_constant(0.01, 10.0, &k, 2.0).unwrap();
        let b = theorem_budget_constant(0.02, 10.0, &k, 2.0).unwrap();
        assert!((a.iterations_real / b.iterations_real - 16.0).abs() < 1e-9);
    }

    #[test]
    fn zero_constants_leave_step_unconstrained() {
        let b = theorem_budget_constant(1.0, 1.0, &abc(0.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(b.iterations, 0);
        assert_eq!(b.step, Bound::Unconstrained);
        assert_eq!(serde_json::to_string(&b.step).unwrap(), "\"unconstrained\"");
        assert!(theorem_budget_constant(0.0, 1.0, &abc(1.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn delta_term_enters() {
        let b = theorem_budget_constant(1.0, 2.0, &abc(0.0, 0.0, 5.0), 1.0).unwrap();
        assert_eq!(b.iterations, 80);
        assert_eq!(b.step, Bound::Finite(0.1));
    }

    #[test]
    fn decaying_budget_examples() {
        assert_eq!(corollary_budget_decaying(1.0, 0.0, 1.0, 0.25).unwrap(), 0);
        assert_eq!(corollary_budget_decaying(1.0, 1.0, 1.0, 0.25).unwrap(), 2);
        // brute force: smallest T with (1/2-theta) c^2 / (mu ((1+T)^(1/2-theta) - 1)) <= gamma^2
        let (c2, mu, gamma, theta) = (3.0, 0.5, 0.7, 0.1);
        let t = corollary_budget_decaying(gamma, c2, mu, theta).unwrap();
        let ok = |t: u64| (0.5 - theta) * c2 / (mu * ((1.0 + t as f64).powf(0.5 - theta) - 1.0)) <= gamma * gamma;
        assert!(ok(t));
        assert!(!ok(t - 1));
        assert!(corollary_budget_decaying(1.0, 1.0, 1.0, 0.5).is_err());
    }
}
