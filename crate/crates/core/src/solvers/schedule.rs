use serde::{Deserialize, Serialize};

use super::SolverError;

/// Step-size rule `mu_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { mu: f64 },
    /// `mu_t = mu / (1 + t)^(1/2 + theta)` with `0 < theta < 1/2`.
    Polynomial { mu: f64, theta: f64 },
}

impl StepSchedule {
    pub fn constant(mu: f64) -> Result<Self, SolverError> {
        let s = StepSchedule::Constant { mu };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(mu: f64, theta: f64) -> Result<Self, SolverError> {
        let s = StepSchedule::Polynomial { mu, theta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let mu = self.base();
        if !(mu.is_finite() && mu > 0.0) {
            return Err(SolverError::Config(format!("step size must be positive and finite, got {mu}")));
        }
        if let StepSchedule::Polynomial { theta, .. } = *self {
            if !(theta > 0.0 && theta < 0.5) {
                return Err(SolverError::Config(format!("theta must lie in (0, 1/2), got {theta}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { mu } => mu,
            StepSchedule::Polynomial { mu, theta } => mu / ((1 + t) as f64).powf(0.5 + theta),
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            StepSchedule::Constant { mu } | StepSchedule::Polynomial { mu, .. } => mu,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            StepSchedule::Constant { .. } => None,
            StepSchedule::Polynomial { theta, .. } => Some(theta),
        }
    }

    /// Same shape with the base step multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            StepSchedule::Constant { mu } => StepSchedule::Constant { mu: mu * c },
            StepSchedule::Polynomial { mu, theta } => StepSchedule::Polynomial { mu: mu * c, theta },
        }
    }
}
