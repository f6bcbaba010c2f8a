//! Block-partitioned measurement operators and intensity simulation.
//!
//! An ensemble stacks blocks `A_1, ..., A_R` that all act on `C^d`. A block is
//! either an explicit dense matrix or one STFT window position
//! `z -> F diag(S_s w) z`.

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    circular_shift, dft, dft_adjoint, norm_inf, norm_sq, spectral_norm, ComplexVector, DenseOperator,
    LinalgError, LinearOperator, PowerIteration, C64,
};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("ensemble needs at least one block")]
    NoBlocks,
    #[error("duplicate shift {0} (shifts are taken mod d)")]
    DuplicateShift(i64),
    #[error("window is identically zero")]
    ZeroWindow,
    #[error("{0} shifts requested but at most d = {1} are distinct")]
    TooManyShifts(usize, usize),
    #[error("STFT blocks must share one window")]
    MixedWindows,
    #[error("block {block} has {rows} rows but {got} measurements")]
    MeasurementLength { block: usize, rows: usize, got: usize },
    #[error("expected measurements for {expected} blocks, got {got}")]
    MeasurementCount { expected: usize, got: usize },
    #[error("invalid noise parameter: {0}")]
    BadNoise(String),
    #[error("ensemble document: {0}")]
    Format(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Dense(DenseOperator),
    /// `F diag(S_shift w)`; the shift is reduced mod `d` when applied.
    Stft { window: Arc<[C64]>, shift: i64 },
}

impl Block {
    pub fn rows(&self) -> usize {
        match self {
            Block::Dense(m) => m.rows(),
            Block::Stft { window, .. } => window.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Block::Dense(m) => m.cols(),
            Block::Stft { window, .. } => window.len(),
        }
    }

    /// `S_s w` for STFT blocks.
    pub fn shifted_window(&self) -> Option<Vec<C64>> {
        match self {
            Block::Stft { window, shift } => Some(circular_shift(window, *shift)),
            Block::Dense(_) => None,
        }
    }

    pub fn apply(&self, z: &[C64]) -> Result<Vec<C64>, MeasurementError> {
        check_len(self.cols(), z.len())?;
        Ok(self.forward(z))
    }

    pub fn adjoint(&self, u: &[C64]) -> Result<Vec<C64>, MeasurementError> {
        check_len(self.rows(), u.len())?;
        Ok(self.backward(u))
    }

    pub(crate) fn forward(&self, z: &[C64]) -> Vec<C64> {
        match self {
            Block::Dense(m) => m.apply(z),
            Block::Stft { window, shift } => {
                let sw = circular_shift(window, *shift);
                let exit: Vec<C64> = sw.iter().zip(z).map(|(a, b)| a * b).collect();
                dft(&exit)
            }
        }
    }

    pub(crate) fn backward(&self, u: &[C64]) -> Vec<C64> {
        match self {
            Block::Dense(m) => m.apply_adjoint(u),
            Block::Stft { window, shift } => {
                let sw = circular_shift(window, *shift);
                dft_adjoint(u).into_iter().zip(&sw).map(|(a, b)| a * b.conj()).collect()
            }
        }
    }

    /// `||A_r||^2`. Closed forms for STFT blocks (`d ||w||_inf^2`) and single
    /// rows (`||row||_2^2`); power iteration otherwise.
    pub fn norm_sq(&self, opts: PowerIteration) -> Result<f64, LinalgError> {
        match self {
            Block::Stft { window, .. } => {
                let m = norm_inf(window);
                Ok(window.len() as f64 * m * m)
            }
            Block::Dense(m) if m.rows() == 1 => Ok(norm_sq(m.row(0))),
            Block::Dense(_) => spectral_norm(self, opts).map(|n| n * n),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        match self {
            Block::Dense(m) => norm_sq(m.data()),
            Block::Stft { window, .. } => window.len() as f64 * norm_sq(window),
        }
    }

    /// Materialize the block as a dense matrix.
    pub fn to_dense(&self) -> DenseOperator {
        match self {
            Block::Dense(m) => m.clone(),
            Block::Stft { .. } => {
                let d = self.cols();
                let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
                for j in 0..d {
                    cols.push(self.forward(&ComplexVector::unit(d, j)));
                }
                DenseOperator::from_fn(d, d, |i, j| cols[j][i]).expect("finite block")
            }
        }
    }
}

impl LinearOperator for Block {
    fn rows(&self) -> usize {
        Block::rows(self)
    }
    fn cols(&self) -> usize {
        Block::cols(self)
    }
    fn apply(&self, z: &[C64]) -> Vec<C64> {
        self.forward(z)
    }
    fn apply_adjoint(&self, u: &[C64]) -> Vec<C64> {
        self.backward(u)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), MeasurementError> {
    if expected != got {
        Err(MeasurementError::Dimension { expected, got })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    None,
    /// Additive `N(0, sigma^2)` per entry; measured intensities may go negative.
    Gaussian { sigma: f64 },
    /// `y = Poisson(scale * |Ax|^2) / scale`, i.e. `scale` counts per unit intensity.
    Poisson { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        match self.kind {
            NoiseKind::None => Ok(()),
            NoiseKind::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            NoiseKind::Poisson { scale } if scale.is_finite() && scale > 0.0 => Ok(()),
            k => Err(MeasurementError::BadNoise(format!("{k:?}"))),
        }
    }
}

/// Blocks `A_1..A_R` on `C^d` plus, once simulated or loaded, intensities `y^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    d: usize,
    blocks: Vec<Block>,
    y: Option<Vec<Vec<f64>>>,
    truth: Option<Vec<C64>>,
}

impl MeasurementEnsemble {
    pub fn new(d: usize, blocks: Vec<Block>) -> Result<Self, MeasurementError> {
        if blocks.is_empty() {
            return Err(MeasurementError::NoBlocks);
        }
        let mut window: Option<&Arc<[C64]>> = None;
        for b in &blocks {
            check_len(d, b.cols())?;
            if let Block::Stft { window: w, .. } = b {
                match window {
                    None => window = Some(w),
                    Some(prev) if prev[..] == w[..] => {}
                    Some(_) => return Err(MeasurementError::MixedWindows),
                }
            }
        }
        Ok(Self { d, blocks, y: None, truth: None })
    }

    /// One STFT block per shift, in the given order.
    pub fn stft(window: &ComplexVector, shifts: &[i64]) -> Result<Self, MeasurementError> {
        let d = window.len();
        if shifts.is_empty() {
            return Err(MeasurementError::NoBlocks);
        }
        if shifts.len() > d {
            return Err(MeasurementError::TooManyShifts(shifts.len(), d));
        }
        if window.iter().all(|c| c.norm() == 0.0) {
            return Err(MeasurementError::ZeroWindow);
        }
        let mut seen = vec![false; d];
        for &s in shifts {
            let k = s.rem_euclid(d as i64) as usize;
            if seen[k] {
                return Err(MeasurementError::DuplicateShift(s));
            }
            seen[k] = true;
        }
        let w: Arc<[C64]> = window.to_vec().into();
        let blocks = shifts
            .iter()
            .map(|&shift| Block::Stft { window: w.clone(), shift })
            .collect();
        Self::new(d, blocks)
    }

    /// Split a dense matrix into single-row blocks (the Kaczmarz partition).
    pub fn dense_rows(op: &DenseOperator) -> Self {
        let blocks = (0..op.rows()).map(|i| Block::Dense(op.row_range(i, i + 1))).collect();
        Self::new(op.cols(), blocks).expect("rows share the column dimension")
    }

    /// Split a dense matrix into consecutive blocks of `block_rows` rows (the last may be shorter).
    pub fn dense_blocks(op: &DenseOperator, block_rows: usize) -> Result<Self, MeasurementError> {
        if block_rows == 0 {
            return Err(MeasurementError::NoBlocks);
        }
        let blocks = (0..op.rows())
            .step_by(block_rows)
            .map(|s| Block::Dense(op.row_range(s, (s + block_rows).min(op.rows()))))
            .collect();
        Self::new(op.cols(), blocks)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, r: usize) -> &Block {
        &self.blocks[r]
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(Block::rows).sum()
    }

    pub fn measurements(&self) -> Option<&[Vec<f64>]> {
        self.y.as_deref()
    }

    /// All intensities concatenated in block order.
    pub fn flat_measurements(&self) -> Option<Vec<f64>> {
        self.y.as_ref().map(|y| y.iter().flatten().copied().collect())
    }

    pub fn truth(&self) -> Option<&[C64]> {
        self.truth.as_deref()
    }

    /// The shared window if every block is an STFT block.
    pub fn stft_window(&self) -> Option<&[C64]> {
        let mut out = None;
        for b in &self.blocks {
            match b {
                Block::Stft { window, .. } => out = Some(&window[..]),
                Block::Dense(_) => return None,
            }
        }
        out
    }

    pub fn is_row_partition(&self) -> bool {
        self.blocks.iter().all(|b| matches!(b, Block::Dense(m) if m.rows() == 1))
    }

    pub fn with_measurements(mut self, y: Vec<Vec<f64>>) -> Result<Self, MeasurementError> {
        if y.len() != self.blocks.len() {
            return Err(MeasurementError::MeasurementCount { expected: self.blocks.len(), got: y.len() });
        }
        for (r, (b, yr)) in self.blocks.iter().zip(&y).enumerate() {
            if b.rows() != yr.len() {
                return Err(MeasurementError::MeasurementLength { block: r, rows: b.rows(), got: yr.len() });
            }
            if yr.iter().any(|v| !v.is_finite()) {
                return Err(MeasurementError::Format(format!("non-finite measurement in block {r}")));
            }
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn with_truth(mut self, x: Vec<C64>) -> Result<Self, MeasurementError> {
        check_len(self.d, x.len())?;
        self.truth = Some(x);
        Ok(self)
    }

    /// `y^r = |A_r x|^2 + n^r`. Records `x` as the ground truth.
    pub fn simulate(&self, x: &[C64], noise: &NoiseSpec) -> Result<Self, MeasurementError> {
        check_len(self.d, x.len())?;
        noise.validate()?;
        let mut rng = SeededRng::new(noise.seed, crate::rng::streams::NOISE);
        let mut y = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let ax = b.forward(x);
            let mut yr: Vec<f64> = ax.iter().map(|c| c.norm_sqr()).collect();
            match noise.kind {
                NoiseKind::None => {}
                NoiseKind::Gaussian { sigma: 0.0 } => {}
                NoiseKind::Gaussian { sigma } => {
                    for v in yr.iter_mut() {
                        *v += sigma * rng.standard_normal();
                    }
                }
                NoiseKind::Poisson { scale } => {
                    for v in yr.iter_mut() {
                        let mean = scale * *v;
                        let count = if mean > 0.0 {
                            Poisson::new(mean)
                                .map_err(|e| MeasurementError::BadNoise(e.to_string()))?
                                .sample(&mut rng)
                        } else {
                            0.0
                        };
                        *v = count / scale;
                    }
                }
            }
            y.push(yr);
        }
        let mut out = self.clone();
        out.y = Some(y);
        out.truth = Some(x.to_vec());
        Ok(out)
    }

    /// `||A||` for the stacked operator. For STFT ensembles `A^* A` is the
    /// diagonal `d sum_r |S_{s_r} w|^2`, so no iteration is needed.
    pub fn operator_norm(&self, opts: PowerIteration) -> Result<f64, LinalgError> {
        if self.stft_window().is_some() {
            let mut diag = vec![0.0; self.d];
            for b in &self.blocks {
                let sw = b.shifted_window().expect("stft block");
                diag.iter_mut().zip(&sw).for_each(|(acc, w)| *acc += w.norm_sqr());
            }
            return Ok((self.d as f64 * diag.iter().fold(0.0f64, |m, &v| m.max(v))).sqrt());
        }
        spectral_norm(self, opts)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.iter().map(Block::frobenius_sq).sum::<f64>().sqrt()
    }

    pub fn block_norms_sq(&self, opts: PowerIteration) -> Result<Vec<f64>, LinalgError> {
        self.blocks.iter().map(|b| b.norm_sq(opts)).collect()
    }

    /// The stacked operator as one dense matrix.
    pub fn to_dense(&self) -> DenseOperator {
        let parts: Vec<DenseOperator> = self.blocks.iter().map(Block::to_dense).collect();
        let mut data = Vec::new();
        for p in &parts {
            data.extend_from_slice(p.data());
        }
        DenseOperator::new(self.total_rows(), self.d, data).expect("stacked blocks")
    }

    pub fn to_json(&self) -> Result<String, MeasurementError> {
        let doc = EnsembleDocument::from_ensemble(self)?;
        serde_json::to_string_pretty(&doc).map_err(|e| MeasurementError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, MeasurementError> {
        let doc: EnsembleDocument = serde_json::from_str(s).map_err(|e| MeasurementError::Format(e.to_string()))?;
        doc.into_ensemble()
    }
}

impl LinearOperator for MeasurementEnsemble {
    fn rows(&self) -> usize {
        self.total_rows()
    }
    fn cols(&self) -> usize {
        self.d
    }
    fn apply(&self, z: &[C64]) -> Vec<C64> {
        self.blocks.iter().flat_map(|b| b.forward(z)).collect()
    }
    fn apply_adjoint(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.d];
        let mut offset = 0;
        for b in &self.blocks {
            let n = b.rows();
            for (o, v) in out.iter_mut().zip(b.backward(&u[offset..offset + n])) {
                *o += v;
            }
            offset += n;
        }
        out
    }
}

/// Little-endian f64 bytes, complex values interleaved re/im.
pub fn encode_complex(v: &[C64]) -> String {
    let mut bytes = Vec::with_capacity(16 * v.len());
    for c in v {
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_complex(s: &str) -> Result<Vec<C64>, MeasurementError> {
    let reals = decode_real(s)?;
    if reals.len() % 2 != 0 {
        return Err(MeasurementError::Format("odd number of reals in complex payload".into()));
    }
    Ok(reals.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
}

pub fn encode_real(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_real(s: &str) -> Result<Vec<f64>, MeasurementError> {
    let bytes = B64.decode(s).map_err(|e| MeasurementError::Format(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(MeasurementError::Format("payload length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum BlockDocument {
    Stft { shift: i64 },
    Dense { rows: usize, matrix: String },
}

/// On-disk ensemble container.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDocument {
    d: usize,
    blocks: Vec<BlockDocument>,
    #[serde(default)]
    window: Option<String>,
    /// Concatenated `y^1, ..., y^R`.
    #[serde(default)]
    y: Option<String>,
    #[serde(default)]
    truth: Option<String>,
}

impl EnsembleDocument {
    fn from_ensemble(e: &MeasurementEnsemble) -> Result<Self, MeasurementError> {
        let mut window = None;
        let blocks = e
            .blocks
            .iter()
            .map(|b| match b {
                Block::Stft { window: w, shift } => {
                    window.get_or_insert_with(|| encode_complex(w));
                    BlockDocument::Stft { shift: *shift }
                }
                Block::Dense(m) => BlockDocument::Dense { rows: m.rows(), matrix: encode_complex(m.data()) },
            })
            .collect();
        Ok(Self {
            d: e.d,
            blocks,
            window,
            y: e.flat_measurements().map(|y| encode_real(&y)),
            truth: e.truth.as_deref().map(encode_complex),
        })
    }

    fn into_ensemble(self) -> Result<MeasurementEnsemble, MeasurementError> {
        let d = self.d;
        let window: Option<Arc<[C64]>> = match &self.window {
            Some(s) => {
                let w = decode_complex(s)?;
                check_len(d, w.len())?;
                Some(ComplexVector::new(w)?.to_vec().into())
            }
            None => None,
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            blocks.push(match b {
                BlockDocument::Stft { shift } => {
                    let w = window
                        .clone()
                        .ok_or_else(|| MeasurementError::Format("stft block without window".into()))?;
                    Block::Stft { window: w, shift }
                }
                BlockDocument::Dense { rows, matrix } => {
                    Block::Dense(DenseOperator::new(rows, d, decode_complex(&matrix)?)?)
                }
            });
        }
        let mut e = MeasurementEnsemble::new(d, blocks)?;
        if let Some(y) = self.y {
            let flat = decode_real(&y)?;
            if flat.len() != e.total_rows() {
                return Err(MeasurementError::Format(format!(
                    "y has {} entries, blocks have {} rows",
                    flat.len(),
                    e.total_rows()
                )));
            }
            let mut split = Vec::with_capacity(e.num_blocks());
            let mut off = 0;
            for b in &e.blocks {
                split.push(flat[off..off + b.rows()].to_vec());
                off += b.rows();
            }
            e = e.with_measurements(split)?;
        }
        if let Some(t) = self.truth {
            e = e.with_truth(decode_complex(&t)?)?;
        }
        Ok(e)
    }
}
