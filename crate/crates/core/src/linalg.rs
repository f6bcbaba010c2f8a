//! Complex vector and matrix primitives.
//!
//! Indices are zero-based throughout; the DFT matrix is
//! `F[k][j] = exp(-2*pi*i*k*j/d)` and the circular shift is
//! `(S_r v)[j] = v[(j - r) mod d]`.

use std::f64::consts::PI;
use std::ops::Deref;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::rng::SeededRng;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("vector must have at least one entry")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("matrix data has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("power iteration did not converge in {iterations} iterations (last estimate {last_estimate})")]
    NotConverged { iterations: usize, last_estimate: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// A nonempty complex vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector(Vec<C64>);

impl ComplexVector {
    pub fn new(entries: Vec<C64>) -> Result<Self, LinalgError> {
        if entries.is_empty() {
            return Err(LinalgError::Empty);
        }
        if let Some(j) = entries.iter().position(|c| !is_finite(*c)) {
            return Err(LinalgError::NonFinite(j));
        }
        Ok(Self(entries))
    }

    pub fn zeros(d: usize) -> Self {
        assert!(d > 0, "zero-length vector");
        Self(vec![C64::new(0.0, 0.0); d])
    }

    /// `e_j` with a one at zero-based position `j`.
    pub fn unit(d: usize, j: usize) -> Self {
        let mut v = Self::zeros(d);
        v.0[j] = C64::new(1.0, 0.0);
        v
    }

    /// Entries with i.i.d. standard normal real and imaginary parts.
    pub fn random(d: usize, rng: &mut SeededRng) -> Self {
        Self(random_gaussian(d, rng))
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }
}

impl Deref for ComplexVector {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl TryFrom<Vec<C64>> for ComplexVector {
    type Error = LinalgError;
    fn try_from(v: Vec<C64>) -> Result<Self, LinalgError> {
        Self::new(v)
    }
}

#[inline]
pub fn is_finite(c: C64) -> bool {
    c.re.is_finite() && c.im.is_finite()
}

pub fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|&c| is_finite(c))
}

pub(crate) fn random_gaussian(d: usize, rng: &mut SeededRng) -> Vec<C64> {
    (0..d)
        .map(|_| C64::new(rng.standard_normal(), rng.standard_normal()))
        .collect()
}

/// `<u, v> = sum_j u_j conj(v_j)`.
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum()
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

pub fn norm2(v: &[C64]) -> f64 {
    norm_sq(v).sqrt()
}

pub fn norm_inf(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Entrywise sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(c: C64) -> C64 {
    let r = c.norm();
    if r == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        c / r
    }
}

pub fn hadamard(u: &[C64], v: &[C64]) -> Vec<C64> {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).collect()
}

/// `(S_r v)[j] = v[(j - r) mod d]`; negative shifts are allowed.
pub fn circular_shift(v: &[C64], r: i64) -> Vec<C64> {
    let d = v.len();
    if d == 0 {
        return Vec::new();
    }
    let r = r.rem_euclid(d as i64) as usize;
    let mut out = Vec::with_capacity(d);
    out.extend_from_slice(&v[d - r..]);
    out.extend_from_slice(&v[..d - r]);
    out
}

#[inline]
fn twiddle(num: usize, den: usize) -> C64 {
    // exp(-2 pi i num/den) with num reduced so the angle stays in [0, 2pi)
    let angle = -2.0 * PI * ((num % den) as f64) / den as f64;
    C64::new(angle.cos(), angle.sin())
}

/// Direct O(d^2) evaluation of `F v`.
pub fn dft_direct(v: &[C64]) -> Vec<C64> {
    let d = v.len();
    (0..d)
        .map(|k| {
            v.iter()
                .enumerate()
                .map(|(j, &x)| x * twiddle(k * j, d))
                .sum()
        })
        .collect()
}

/// Iterative radix-2 decimation-in-time FFT. `v.len()` must be a power of two.
pub fn fft_radix2(v: &[C64]) -> Vec<C64> {
    let n = v.len();
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length, got {n}");
    let bits = n.trailing_zeros();
    let mut a = vec![C64::new(0.0, 0.0); n];
    for (i, &x) in v.iter().enumerate() {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        a[j] = x;
    }
    let twiddles: Vec<C64> = (0..n / 2).map(|k| twiddle(k, n)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let u = a[start + k];
                let t = a[start + k + half] * w;
                a[start + k] = u + t;
                a[start + k + half] = u - t;
            }
        }
        len <<= 1;
    }
    a
}

/// `F v`. Power-of-two lengths go through the radix-2 FFT, everything else
/// through the direct product.
pub fn dft(v: &[C64]) -> Vec<C64> {
    if v.len().is_power_of_two() {
        fft_radix2(v)
    } else {
        dft_direct(v)
    }
}

/// `F^{-1} v = (1/d) F^* v`.
pub fn idft(v: &[C64]) -> Vec<C64> {
    let d = v.len();
    let conj: Vec<C64> = v.iter().map(|c| c.conj()).collect();
    let scale = 1.0 / d as f64;
    dft(&conj).into_iter().map(|c| c.conj() * scale).collect()
}

/// `F^* v = d F^{-1} v`, the adjoint of the DFT.
pub fn dft_adjoint(v: &[C64]) -> Vec<C64> {
    let conj: Vec<C64> = v.iter().map(|c| c.conj()).collect();
    dft(&conj).into_iter().map(|c| c.conj()).collect()
}

/// A linear map with an adjoint, enough for power iteration.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, z: &[C64]) -> Vec<C64>;
    fn apply_adjoint(&self, u: &[C64]) -> Vec<C64>;
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Shape { rows, cols, got: data.len() });
        }
        if let Some(j) = data.iter().position(|c| !is_finite(*c)) {
            return Err(LinalgError::NonFinite(j));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_fn(d, d, |i, j| C64::new(if i == j { 1.0 } else { 0.0 }, 0.0))
            .expect("identity is well-formed")
    }

    pub fn diag(v: &[C64]) -> Self {
        Self::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { C64::new(0.0, 0.0) })
            .expect("diag of a finite vector")
    }

    /// Complex Gaussian entries with unit variance per entry.
    pub fn random_gaussian(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let data = (0..rows * cols)
            .map(|_| C64::new(s * rng.standard_normal(), s * rng.standard_normal()))
            .collect();
        Self::new(rows, cols, data).expect("gaussian entries are finite")
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj()).expect("transpose")
    }

    /// Sub-matrix made of rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self::new(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
            .expect("nonempty row range")
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, z: &[C64]) -> Vec<C64> {
        assert_eq!(z.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
    fn apply_adjoint(&self, u: &[C64]) -> Vec<C64> {
        assert_eq!(u.len(), self.rows);
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (i, &ui) in u.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * ui;
            }
        }
        out
    }
}

pub fn frobenius_norm(op: &DenseOperator) -> f64 {
    op.frobenius_norm()
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, seed: 0x5eed_0fa1_10e5 }
    }
}

/// Spectral norm by power iteration on `op^* op`.
///
/// The start vector is all-ones plus a small fixed-seed perturbation, so the
/// estimate is reproducible. Iteration stops once successive Rayleigh quotients
/// of `op^* op` agree to `tol / 100` relative, which leaves room for slowly
/// converging spectra.
pub fn spectral_norm(op: &dyn LinearOperator, opts: PowerIteration) -> Result<f64, LinalgError> {
    if !(opts.tol > 0.0) {
        return Err(LinalgError::BadTolerance(opts.tol));
    }
    let d = op.cols();
    let mut rng = SeededRng::new(opts.seed, 0);
    let mut v: Vec<C64> = (0..d)
        .map(|_| C64::new(1.0 + 0.1 * (rng.random::<f64>() - 0.5), 0.1 * (rng.random::<f64>() - 0.5)))
        .collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|c| *c /= n);

    let mut prev = f64::NAN;
    let mut lambda = 0.0;
    for _ in 0..opts.max_iter {
        let av = op.apply(&v);
        lambda = norm_sq(&av);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        if (lambda - prev).abs() <= opts.tol * lambda * 1e-2 {
            return Ok(lambda.sqrt());
        }
        prev = lambda;
        let w = op.apply_adjoint(&av);
        let n = norm2(&w);
        if n == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|c| c / n).collect();
    }
    Err(LinalgError::NotConverged { iterations: opts.max_iter, last_estimate: lambda.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    // Brute-force F as an explicit matrix.
    fn dft_matrix(d: usize) -> DenseOperator {
        DenseOperator::from_fn(d, d, |k, j| {
            let a = -2.0 * PI * (k as f64) * (j as f64) / d as f64;
            c(a.cos(), a.sin())
        })
        .unwrap()
    }

    #[test]
    fn dft_of_first_unit_vector_is_all_ones() {
        let out = dft(&ComplexVector::unit(4, 0));
        assert!(max_abs_diff(&out, &[c(1.0, 0.0); 4]) < 1e-15);
    }

    #[test]
    fn dft_of_ones_concentrates_at_zero() {
        let out = dft(&[c(1.0, 0.0); 4]);
        assert!(max_abs_diff(&out, &[c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]) < 1e-14);
        let back = idft(&out);
        assert!(max_abs_diff(&back, &[c(1.0, 0.0); 4]) < 1e-15);
    }

    #[test]
    fn dft_matches_matrix_product() {
        let mut rng = SeededRng::new(1, 0);
        for d in [3, 5, 8, 12, 16, 64, 128] {
            let v = ComplexVector::random(d, &mut rng);
            let expect = dft_matrix(d).apply(&v);
            let got = dft(&v);
            assert!(max_abs_diff(&got, &expect) <= 1e-12 * norm2(&expect), "d={d}");
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let mut rng = SeededRng::new(2, 0);
        for d in [1, 2, 4, 8, 16, 32, 64] {
            let v = ComplexVector::random(d, &mut rng);
            let a = fft_radix2(&v);
            let b = dft_direct(&v);
            assert!(max_abs_diff(&a, &b) <= 1e-12 * norm2(&b).max(1.0), "d={d}");
        }
    }

    #[test]
    fn idft_inverts_and_matches_conjugate_matrix() {
        let mut rng = SeededRng::new(3, 0);
        let v = ComplexVector::random(16, &mut rng);
        let round = idft(&dft(&v));
        assert!(max_abs_diff(&round, &v) <= 1e-12 * norm2(&v));

        for d in [6, 16] {
            let u = ComplexVector::random(d, &mut rng);
            let mut expect = dft_matrix(d).conj_transpose().apply(&u);
            expect.iter_mut().for_each(|x| *x /= d as f64);
            assert!(max_abs_diff(&idft(&u), &expect) <= 1e-12 * norm2(&expect));
            let adj = dft_matrix(d).conj_transpose().apply(&u);
            assert!(max_abs_diff(&dft_adjoint(&u), &adj) <= 1e-12 * norm2(&adj));
        }
    }

    #[test]
    fn shift_examples() {
        let mut rng = SeededRng::new(4, 0);
        let v = ComplexVector::random(7, &mut rng);
        assert_eq!(circular_shift(&v, 0), v.to_vec());
        assert_eq!(circular_shift(&v, 7), v.to_vec());
        assert_eq!(circular_shift(&v, -7), v.to_vec());
        let e2 = circular_shift(&ComplexVector::unit(4, 0), 1);
        assert_eq!(e2, ComplexVector::unit(4, 1).to_vec());
        // index formula, negative shift
        let s = circular_shift(&v, -2);
        for j in 0..7 {
            assert_eq!(s[j], v[(j + 2) % 7]);
        }
    }

    #[test]
    fn spectral_norm_identity_and_diag() {
        let id = DenseOperator::identity(8);
        let n = spectral_norm(&id, PowerIteration::default()).unwrap();
        assert!((n - 1.0).abs() < 1e-12);

        let mut rng = SeededRng::new(5, 0);
        let v = ComplexVector::random(9, &mut rng);
        let n = spectral_norm(&DenseOperator::diag(&v), PowerIteration::default()).unwrap();
        assert!((n - norm_inf(&v)).abs() <= 1e-8 * norm_inf(&v));
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        let z = DenseOperator::new(3, 2, vec![c(0.0, 0.0); 6]).unwrap();
        assert_eq!(spectral_norm(&z, PowerIteration::default()).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let mut rng = SeededRng::new(6, 0);
        let a = DenseOperator::random_gaussian(6, 4, &mut rng);
        let err = spectral_norm(&a, PowerIteration { max_iter: 1, ..Default::default() }).unwrap_err();
        match err {
            LinalgError::NotConverged { iterations, last_estimate } => {
                assert_eq!(iterations, 1);
                assert!(last_estimate > 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(spectral_norm(&a, PowerIteration { tol: 0.0, ..Default::default() }).is_err());
    }

    /// Largest eigenvalue of a Hermitian matrix `H = X + iY` via cyclic Jacobi
    /// rotations on the real symmetric embedding `[[X, -Y], [Y, X]]`.
    fn hermitian_max_eig(h: &DenseOperator) -> f64 {
        let n = h.rows();
        let m = 2 * n;
        let mut a = vec![vec![0.0f64; m]; m];
        for i in 0..n {
            for j in 0..n {
                let e = h.get(i, j);
                a[i][j] = e.re;
                a[i + n][j + n] = e.re;
                a[i][j + n] = -e.im;
                a[i + n][j] = e.im;
            }
        }
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        off += a[i][j] * a[i][j];
                    }
                }
            }
            if off < 1e-28 {
                break;
            }
            for p in 0..m {
                for q in p + 1..m {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for k in 0..m {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = cs * akp - sn * akq;
                        a[k][q] = sn * akp + cs * akq;
                    }
                    for k in 0..m {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = cs * apk - sn * aqk;
                        a[q][k] = sn * apk + cs * aqk;
                    }
                }
            }
        }
        (0..m).map(|i| a[i][i]).fold(f64::MIN, f64::max)
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        let mut rng = SeededRng::new(7, 0);
        for _ in 0..5 {
            let a = DenseOperator::random_gaussian(6, 4, &mut rng);
            let ah = a.conj_transpose();
            let gram = DenseOperator::from_fn(4, 4, |i, j| {
                (0..6).map(|k| ah.get(i, k) * a.get(k, j)).sum()
            })
            .unwrap();
            let expect = hermitian_max_eig(&gram).sqrt();
            let got = spectral_norm(&a, PowerIteration::default()).unwrap();
            assert!((got - expect).abs() <= 1e-8 * expect, "{got} vs {expect}");
        }
    }

    #[test]
    fn frobenius_examples() {
        assert!((frobenius_norm(&DenseOperator::identity(5)) - 5f64.sqrt()).abs() < 1e-15);
        let z = DenseOperator::new(2, 2, vec![c(0.0, 0.0); 4]).unwrap();
        assert_eq!(frobenius_norm(&z), 0.0);
        let mut rng = SeededRng::new(8, 0);
        let a = DenseOperator::random_gaussian(4, 4, &mut rng);
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let e = a.get(i, j);
                s += e.re * e.re + e.im * e.im;
            }
        }
        assert!((frobenius_norm(&a) - s.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn dense_adjoint_consistency() {
        let mut rng = SeededRng::new(9, 0);
        let a = DenseOperator::random_gaussian(5, 3, &mut rng);
        let z = ComplexVector::random(3, &mut rng);
        let u = ComplexVector::random(5, &mut rng);
        let lhs = inner(&a.apply(&z), &u);
        let rhs = inner(&z, &a.apply_adjoint(&u));
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
    }

    #[test]
    fn vector_invariants() {
        assert_eq!(ComplexVector::new(vec![]), Err(LinalgError::Empty));
        assert_eq!(
            ComplexVector::new(vec![c(1.0, 0.0), c(f64::NAN, 0.0)]),
            Err(LinalgError::NonFinite(1))
        );
        assert!(DenseOperator::new(2, 2, vec![c(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sgn(c(0.0, 0.0)), c(0.0, 0.0));
        assert!((sgn(c(3.0, 4.0)) - c(0.6, 0.8)).norm() < 1e-16);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_strategy() -> impl Strategy<Value = Vec<C64>> {
            prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)
                .prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
        }

        proptest! {
            #[test]
            fn parseval(v in vec_strategy()) {
                let d = v.len() as f64;
                let lhs = norm2(&dft(&v));
                let rhs = d.sqrt() * norm2(&v);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
            }

            #[test]
            fn shift_round_trip(v in vec_strategy(), r in -100i64..100) {
                let d = v.len() as i64;
                let back = circular_shift(&circular_shift(&v, r), d - r);
                prop_assert_eq!(back, v);
            }

            #[test]
            fn spectral_norm_bounds_samples(seed in 0u64..1000) {
                let mut rng = SeededRng::new(seed, 1);
                let a = DenseOperator::random_gaussian(5, 4, &mut rng);
                let tol = 1e-10;
                let n = spectral_norm(&a, PowerIteration { tol, ..Default::default() }).unwrap();
                for _ in 0..10 {
                    let v = ComplexVector::random(4, &mut rng);
                    let ratio = norm2(&a.apply(&v)) / norm2(&v);
                    prop_assert!(ratio <= n + tol * n);
                }
            }
        }
    }
}
