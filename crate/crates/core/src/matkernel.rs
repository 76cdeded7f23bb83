//! Small dense matrix routines used by every certificate check.
//!
//! Everything here is sized for desk-scale circuits: symmetric matrices are
//! capped at 64×64 and the symmetric eigensolver is a plain cyclic Jacobi
//! iteration, which is deterministic and accurate for such sizes.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_SYM_DIM: usize = 64;
const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;
const SYMMETRY_REL_TOL: f64 = 1e-12;
const PIVOT_REL_TOL: f64 = 1e-12;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data: data.to_vec() })
    }

    /// Builds a matrix from nested rows; panics on ragged input (test and
    /// literal construction only).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(r);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.mul_vec_acc(x, &mut out);
        Ok(out)
    }

    /// `out += self * x` without bounds re-checking; callers guarantee sizes.
    #[inline]
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] = self[(r0 + r, c0 + c)];
            }
        }
        out
    }

    /// Selects the given rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Mat {
        let mut out = Mat::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[(i, j)] = self[(r, c)];
            }
        }
        out
    }

    pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows + b.rows, a.cols + b.cols);
        out.set_block(0, 0, a);
        out.set_block(a.rows, a.cols, b);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Symmetric matrix, exactly symmetric after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat", into = "Mat")]
pub struct SymMatrix(Mat);

impl SymMatrix {
    /// Symmetrizes `(S + Sᵀ)/2` and rejects inputs whose discarded skew part
    /// exceeds `1e-12·‖S‖`.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("{}x{} is not square", m.rows, m.cols)));
        }
        let n = m.rows;
        if n == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if n > MAX_SYM_DIM {
            return Err(Error::TooLarge(n));
        }
        let tol = SYMMETRY_REL_TOL * m.norm_fro();
        let mut skew: f64 = 0.0;
        let mut s = m.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                skew = skew.max(0.5 * (a - b).abs());
                let avg = 0.5 * (a + b);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        if skew > tol {
            return Err(Error::Asymmetric { skew, tol });
        }
        Ok(SymMatrix(s))
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        SymMatrix::new(Mat::diag(values))
    }

    pub fn identity(n: usize) -> Result<Self> {
        SymMatrix::new(Mat::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm_fro()
    }

    /// Congruence `Tᵀ S T`.
    pub fn congruence(&self, t: &Mat) -> Result<SymMatrix> {
        let inner = self.0.matmul(t)?;
        SymMatrix::new(t.transpose().matmul(&inner)?)
    }
}

impl TryFrom<Mat> for SymMatrix {
    type Error = Error;
    fn try_from(m: Mat) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for Mat {
    fn from(s: SymMatrix) -> Mat {
        s.0
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues, with the
/// matching unit eigenvectors stored as columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Cyclic Jacobi eigendecomposition. Iterates until the off-diagonal
/// Frobenius norm drops below `1e-12·‖S‖`.
pub fn sym_eigen(s: &SymMatrix) -> Result<SymEigen> {
    let n = s.dim();
    let mut a = s.as_mat().clone();
    let mut v = Mat::identity(n);
    let target = JACOBI_REL_TOL * s.norm();

    let off = |a: &Mat| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };

    let mut converged = off(&a) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        converged = off(&a) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

pub fn sym_eigenvalues(s: &SymMatrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(s)?.values)
}

pub fn max_eigenvalue(s: &SymMatrix) -> Result<f64> {
    let vals = sym_eigenvalues(s)?;
    Ok(*vals.last().expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
}

pub fn default_zero_tol(s: &SymMatrix) -> f64 {
    1e-9 * s.norm().max(1.0)
}

/// Counts eigenvalues below `-zero_tol`, within `±zero_tol` and above
/// `+zero_tol`. `None` selects [`default_zero_tol`].
pub fn inertia(s: &SymMatrix, zero_tol: Option<f64>) -> Result<Inertia> {
    let tol = zero_tol.unwrap_or_else(|| default_zero_tol(s));
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("zero tolerance {tol} must be >= 0")));
    }
    let mut out = Inertia { neg: 0, zero: 0, pos: 0 };
    for v in sym_eigenvalues(s)? {
        if v < -tol {
            out.neg += 1;
        } else if v > tol {
            out.pos += 1;
        } else {
            out.zero += 1;
        }
    }
    Ok(out)
}

/// True iff the largest eigenvalue is `<= -margin`.
pub fn is_nsd(s: &SymMatrix, margin: f64) -> Result<bool> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin {margin} must be >= 0")));
    }
    Ok(max_eigenvalue(s)? <= -margin)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AffineSolution {
    Unique(Vec<f64>),
    Singular,
}

/// Solves `A·x = b` by Gaussian elimination with partial pivoting. A pivot
/// below `1e-12·‖A‖` reports [`AffineSolution::Singular`].
pub fn solve_affine(a: &Mat, b: &[f64]) -> Result<AffineSolution> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", a.rows, a.cols)));
    }
    let n = a.rows;
    if b.len() != n {
        return Err(Error::Dimension(format!("rhs length {} vs {n}", b.len())));
    }
    let tol = PIVOT_REL_TOL * a.norm_fro();
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tol || pmax == 0.0 {
            return Ok(AffineSolution::Singular);
        }
        if piv != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = tmp;
            }
            rhs.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for k in (r + 1)..n {
            acc -= m[(r, k)] * x[k];
        }
        x[r] = acc / m[(r, r)];
    }
    Ok(AffineSolution::Unique(x))
}

/// Eigenvalues of a general square matrix as `(re, im)` pairs, via a real
/// Schur decomposition.
pub fn general_eigenvalues(a: &Mat) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", a.rows, a.cols)));
    }
    let m = nalgebra::DMatrix::from_row_slice(a.rows, a.cols, &a.data);
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|c| (c.re, c.im)).collect())
}
