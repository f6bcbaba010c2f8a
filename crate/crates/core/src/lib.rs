//! Phase retrieval by (stochastic) amplitude flow.
//!
//! The crate covers measurement ensembles `y = |Ax|^2 + n` built from dense
//! rows or short-time Fourier blocks, the smoothed amplitude loss and its
//! Wirtinger gradient, unbiased stochastic gradients, four solvers (AF, SAF,
//! randomized Kaczmarz, PIE) driven by one loop, iteration budgets, and a
//! deterministic multi-trial experiment harness.

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod harness;
pub mod linalg;
pub mod loss;
pub mod measurement;
pub mod rng;
pub mod solvers;
pub mod stochastic;

pub use linalg::{ComplexVector, DenseOperator, LinalgError, LinearOperator, PowerIteration, C64};
pub use loss::{GradientReport, LossError, LossReport, LossSpec};
pub use measurement::{Block, MeasurementEnsemble, MeasurementError, NoiseKind, NoiseSpec};
pub use rng::SeededRng;
pub use solvers::{Algorithm, RunStatus, RunTrace, SolverConfig, SolverError, StepSchedule, TraceRecord};
pub use stochastic::{AbcConstants, InfimumBounds, SamplingDistribution, SamplingError};
