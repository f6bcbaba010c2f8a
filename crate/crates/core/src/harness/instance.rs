use serde::{Deserialize, Serialize};

use crate::linalg::{ComplexVector, DenseOperator, C64};
use crate::measurement::{MeasurementEnsemble, MeasurementError, NoiseSpec};
use crate::rng::{streams, SeededRng};

/// Window of an STFT ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSpec {
    /// Complex Gaussian entries on `0..support`, zero elsewhere.
    Random { support: usize, seed: u64 },
    Values { re: Vec<f64>, im: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    Stft { window: WindowSpec, shifts: Vec<i64> },
    /// `m` complex Gaussian rows, one block per row.
    DenseRows { m: usize, seed: u64 },
    /// `m` complex Gaussian rows grouped into blocks of `block_rows`.
    DenseBlocks { m: usize, block_rows: usize, seed: u64 },
}

/// A reproducible synthetic instance: operator, random signal, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub d: usize,
    pub ensemble: EnsembleSpec,
    #[serde(default = "NoiseSpec::none")]
    pub noise: NoiseSpec,
    pub signal_seed: u64,
}

/// Starting point shared by every trial of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Complex Gaussian with per-entry variance `scale^2`.
    Random { seed: u64, scale: f64 },
    /// Ground truth plus a complex Gaussian perturbation of size `scale`.
    NearTruth { seed: u64, scale: f64 },
    Values { re: Vec<f64>, im: Vec<f64> },
}

fn values(re: &[f64], im: &[f64], d: usize) -> Result<ComplexVector, MeasurementError> {
    if re.len() != d || im.len() != d {
        return Err(MeasurementError::Dimension { expected: d, got: re.len().max(im.len()) });
    }
    let v = re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect();
    Ok(ComplexVector::new(v)?)
}

impl WindowSpec {
    pub fn build(&self, d: usize) -> Result<ComplexVector, MeasurementError> {
        match self {
            WindowSpec::Random { support, seed } => {
                if *support == 0 || *support > d {
                    return Err(MeasurementError::Format(format!("window support must lie in 1..={d}, got {support}")));
                }
                let mut rng = SeededRng::new(*seed, streams::WINDOW);
                let head = ComplexVector::random(*support, &mut rng).into_inner();
                let mut w = vec![C64::new(0.0, 0.0); d];
                w[..*support].copy_from_slice(&head);
                Ok(ComplexVector::new(w)?)
            }
            WindowSpec::Values { re, im } => values(re, im, d),
        }
    }
}

impl InstanceSpec {
    /// `d` divided evenly into `r` shifts with a random window covering each
    /// pixel twice; the instance used by the decaying-step checks.
    pub fn reference_stft(d: usize, r: usize, seed: u64) -> Self {
        let step = d / r;
        InstanceSpec {
            d,
            ensemble: EnsembleSpec::Stft {
                window: WindowSpec::Random { support: (2 * step).min(d), seed },
                shifts: (0..r).map(|k| (k * step) as i64).collect(),
            },
            noise: NoiseSpec::none(),
            signal_seed: seed,
        }
    }

    pub fn operator(&self) -> Result<MeasurementEnsemble, MeasurementError> {
        if self.d == 0 {
            return Err(MeasurementError::Format("d must be positive".into()));
        }
        match &self.ensemble {
            EnsembleSpec::Stft { window, shifts } => MeasurementEnsemble::stft(&window.build(self.d)?, shifts),
            EnsembleSpec::DenseRows { m, seed } => Ok(MeasurementEnsemble::dense_rows(&self.dense(*m, *seed)?)),
            EnsembleSpec::DenseBlocks { m, block_rows, seed } => {
                MeasurementEnsemble::dense_blocks(&self.dense(*m, *seed)?, *block_rows)
            }
        }
    }

    fn dense(&self, m: usize, seed: u64) -> Result<DenseOperator, MeasurementError> {
        if m == 0 {
            return Err(MeasurementError::Format("m must be positive".into()));
        }
        let mut rng = SeededRng::new(seed, streams::OPERATOR);
        Ok(DenseOperator::random_gaussian(m, self.d, &mut rng))
    }

    pub fn signal(&self) -> Vec<C64> {
        let mut rng = SeededRng::new(self.signal_seed, streams::SIGNAL);
        ComplexVector::random(self.d, &mut rng).into_inner()
    }

    /// Operator with simulated measurements and recorded ground truth.
    pub fn build(&self) -> Result<MeasurementEnsemble, MeasurementError> {
        self.operator()?.simulate(&self.signal(), &self.noise)
    }
}

impl InitSpec {
    pub fn build(&self, e: &MeasurementEnsemble) -> Result<Vec<C64>, MeasurementError> {
        let d = e.dim();
        match self {
            InitSpec::Random { seed, scale } => {
                let mut rng = SeededRng::new(*seed, streams::INIT);
                Ok(ComplexVector::random(d, &mut rng).iter().map(|v| v * *scale).collect())
            }
            InitSpec::NearTruth { seed, scale } => {
                let x = e.truth().ok_or_else(|| MeasurementError::Format("near_truth init needs a ground truth".into()))?;
                let mut rng = SeededRng::new(*seed, streams::INIT);
                let p = ComplexVector::random(d, &mut rng);
                Ok(x.iter().zip(p.iter()).map(|(a, b)| a + b * *scale).collect())
            }
            InitSpec::Values { re, im } => Ok(values(re, im, d)?.into_inner()),
        }
    }
}
