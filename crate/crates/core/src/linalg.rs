//! Dense square matrices over `f64`: commutators, the trace inner product
//! `<X, Y> = tr(X Yᵀ)`, integer trace powers, a cyclic Jacobi symmetric
//! eigensolver and a matrix exponential.
//!
//! Indexing is 0-based in code. Matrices are stored row-major and are always
//! dense; tridiagonal structure is not exploited.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use thiserror::Error;

/// Off-diagonal Frobenius norm target for the Jacobi iteration, relative to `‖S‖`.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
/// Maximum number of cyclic Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative asymmetry accepted by [`symmetric_eigen`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("row {row} has {len} entries, expected {dim}")]
    RaggedRows { row: usize, len: usize, dim: usize },
    #[error("entry ({row}, {col}) is not finite: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, allowed {allowed:e})")]
    NotSymmetric { asymmetry: f64, allowed: f64 },
    #[error("Jacobi iteration did not converge in {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
}

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Zero matrix of side `dim`.
    ///
    /// Panics if `dim == 0`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Diagonal matrix with the given diagonal. Panics on an empty slice.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        let mut data = Vec::with_capacity(dim * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(LinalgError::RaggedRows {
                    row,
                    len: r.len(),
                    dim,
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                left: dim * dim,
                right: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: k / dim,
                col: k % dim,
                value: data[k],
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        let data = (0..dim * dim).map(|k| f(k / dim, k % dim)).collect();
        Self::from_row_major(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|X_ij - X_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Largest entrywise difference, or an error on mismatched sides.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, LinalgError> {
        check_dims(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        check_dims(self, other)?;
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `Qᵀ · self · Q`.
    pub fn congruence_transpose(&self, q: &Self) -> Result<Self, LinalgError> {
        q.transpose().matmul(&self.matmul(q)?)
    }

    /// `Q · self · Qᵀ`.
    pub fn congruence(&self, q: &Self) -> Result<Self, LinalgError> {
        q.matmul(&self.matmul(&q.transpose())?)
    }
}

fn check_dims(a: &DenseMatrix, b: &DenseMatrix) -> Result<(), LinalgError> {
    if a.dim != b.dim {
        return Err(LinalgError::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    Ok(())
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.dim && j < self.dim, "index ({i}, {j}) out of range");
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.dim && j < self.dim, "index ({i}, {j}) out of range");
        &mut self.data[i * self.dim + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

// Operator impls panic on mismatched sides; the fallible free functions below
// are the checked entry points.

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        check_dims(self, rhs).expect("matrix sum");
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        check_dims(self, rhs).expect("matrix difference");
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.matmul(rhs).expect("matrix product")
    }
}

impl Mul<&DenseMatrix> for f64 {
    type Output = DenseMatrix;

    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        rhs.scale(self)
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;

    fn neg(self) -> DenseMatrix {
        self.scale(-1.0)
    }
}

/// `[X, Y] = XY - YX`.
pub fn commutator(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    Ok(&x.matmul(y)? - &y.matmul(x)?)
}

/// `tr(X Yᵀ)`, i.e. the sum of entrywise products.
pub fn frobenius_inner(x: &DenseMatrix, y: &DenseMatrix) -> Result<f64, LinalgError> {
    check_dims(x, y)?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a * b).sum())
}

/// `tr(X^k)` by repeated multiplication. `k = 0` gives `dim`.
pub fn trace_power(x: &DenseMatrix, k: u32) -> f64 {
    if k == 0 {
        return x.dim as f64;
    }
    let mut p = x.clone();
    for _ in 1..k {
        p = &p * x;
    }
    p.trace()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub basis: DenseMatrix,
    pub sweeps: usize,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q · diag(λ) · Qᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        DenseMatrix::from_diagonal(&self.eigenvalues)
            .congruence(&self.basis)
            .expect("basis and spectrum share a dimension")
    }

    /// Smallest distance between consecutive eigenvalues; infinite for `dim == 1`.
    pub fn min_gap(&self) -> f64 {
        self.eigenvalues
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps run in row-cyclic order until the off-diagonal Frobenius norm is at
/// most [`JACOBI_TOLERANCE`]`·‖S‖`. Eigenvalues come out ascending; equal
/// eigenvalues keep the order in which they appear on the rotated diagonal.
pub fn symmetric_eigen(s: &DenseMatrix) -> Result<EigenDecomposition, LinalgError> {
    let norm = s.frobenius_norm();
    let allowed = SYMMETRY_TOLERANCE * norm;
    let asymmetry = s.max_asymmetry();
    if asymmetry > allowed {
        return Err(LinalgError::NotSymmetric { asymmetry, allowed });
    }

    let n = s.dim();
    // Symmetrize so the rotations act on an exactly symmetric matrix.
    let mut a = DenseMatrix::from_fn(n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]))?;
    let mut v = DenseMatrix::identity(n);
    let target = JACOBI_TOLERANCE * norm;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let raw = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep Jacobi output order.
    order.sort_by(|&i, &j| raw[i].total_cmp(&raw[j]));
    let eigenvalues = order.iter().map(|&k| raw[k]).collect();
    let basis = DenseMatrix::from_fn(n, |i, j| v[(i, order[j])])?;
    Ok(EigenDecomposition {
        eigenvalues,
        basis,
        sweeps,
    })
}

/// Annihilate `a[p][q]` with the rotation `J` such that `Jᵀ A J` has a zero
/// `(p, q)` entry; accumulates `V ← V J`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let n = a.dim();
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r != p && r != q {
            let arp = a[(r, p)];
            let arq = a[(r, q)];
            let new_p = c * arp - s * arq;
            let new_q = s * arp + c * arq;
            a[(r, p)] = new_p;
            a[(p, r)] = new_p;
            a[(r, q)] = new_q;
            a[(q, r)] = new_q;
        }
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

/// `exp(X) - I` by scaling and squaring of the Taylor series without its
/// constant term, so small arguments keep full relative accuracy.
pub fn expm1(x: &DenseMatrix) -> DenseMatrix {
    let mut squarings = 0u32;
    let mut scaled_norm = x.frobenius_norm();
    while scaled_norm > 0.5 {
        scaled_norm *= 0.5;
        squarings += 1;
    }
    let y = x.scale(0.5f64.powi(squarings as i32));

    let mut term = y.clone();
    let mut sum = y.clone();
    for k in 2..=30 {
        term = (&term * &y).scale(1.0 / k as f64);
        sum = &sum + &term;
        if term.max_abs() <= 1e-3 * f64::EPSILON * sum.max_abs() {
            break;
        }
    }
    // exp(2Y) - I = 2E + E², with E = exp(Y) - I.
    for _ in 0..squarings {
        sum = &sum.scale(2.0) + &(&sum * &sum);
    }
    sum
}

/// Matrix exponential.
pub fn expm(x: &DenseMatrix) -> DenseMatrix {
    &DenseMatrix::identity(x.dim()) + &expm1(x)
}
