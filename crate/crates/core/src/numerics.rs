//! Dense real-matrix kernels.
//!
//! Everything here works on small row-major `f64` matrices (n ≤ 64) and has
//! no external numerical dependency: cyclic Jacobi for the symmetric
//! eigenproblem, one-sided Jacobi for the SVD, scaling-and-squaring for the
//! matrix exponential, plus the nullspace and principal-angle helpers built
//! on top of the SVD.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{dim_err, Error, Result};

/// Maximum number of Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;

/// Default relative tolerance for [`nullspace`].
pub const DEFAULT_NULLSPACE_TOL: f64 = 1e-8;

/// Row-major dense matrix of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(rows * cols, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for intermediate values produced by kernels.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Column vector (n×1).
    pub fn column(v: &[f64]) -> Self {
        Self::from_raw(v.len(), 1, v.to_vec())
    }

    /// Row vector (1×n).
    pub fn row(v: &[f64]) -> Self {
        Self::from_raw(1, v.len(), v.to_vec())
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>], rows: usize) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for i in 0..rows {
                m[(i, j)] = c[i];
            }
        }
        m
    }

    /// Standard basis vector e_i of length n (zero-based index).
    pub fn basis_vector(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix product, panicking on incompatible shapes.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1))
    }

    /// selfᵀ · other without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        gemm(m, k, n, &self.data, (1, m), &other.data, (n, 1))
    }

    /// self · otherᵀ without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        gemm(m, k, n, &self.data, (k, 1), &other.data, (1, k))
    }

    /// Fallible matrix product.
    pub fn try_matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(
                format!("{}x_ inner {}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(self.matmul(other))
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| dot(self.row_slice(i), v))
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// (M + Mᵀ)/2 for square M.
    pub fn symmetric_part(&self) -> Self {
        let t = self.transpose();
        self.zip_map(&t, |a, b| 0.5 * (a + b))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    /// Quadratic form xᵀ M y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    /// Extracts the sub-matrix with the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs();
        if scale == 0.0 {
            return Err(Error::Singular);
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
                .unwrap();
            if a[(pivot, col)].abs() <= 1e-14 * scale {
                return Err(Error::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
        Ok(inv)
    }

    /// Determinant via LU with partial pivoting.
    pub fn determinant(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
                .unwrap();
            if a[(pivot, col)] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a[(col, col)];
            det *= p;
            for i in (col + 1)..n {
                let f = a[(i, col)] / p;
                for j in col..n {
                    a[(i, j)] -= f * a[(col, j)];
                }
            }
        }
        det
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row_slice(i).iter().map(|v| format!("{v:>12.6e}")).collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = self.row_slice(i).iter().map(|v| format!("{v:>14.8}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(U, d)` with `M = U diag(d) Uᵀ`, `d` sorted descending and the
/// columns of `U` the matching eigenvectors. Iteration stops once the
/// off-diagonal Frobenius norm falls below `tol · ‖M‖_F`.
pub fn sym_eig(m: &DenseMatrix, tol: f64) -> Result<(DenseMatrix, Vec<f64>)> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let asym = m.max_asymmetry();
    if asym > 1e-12 * m.max_abs() {
        return Err(Error::NonSymmetric(asym));
    }
    let n = m.rows();
    let mut a = m.symmetric_part();
    let mut v = DenseMatrix::identity(n);
    let total = m.frobenius_norm();
    let off = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = total == 0.0 || n < 2;
    let mut sweep = 0;
    while !converged {
        if off(&a) < tol * total {
            converged = true;
            break;
        }
        if sweep == MAX_SWEEPS {
            break;
        }
        sweep += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J with J the (p,q) rotation
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            algorithm: "jacobi eigensolver",
            sweeps: MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let d: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let all: Vec<usize> = (0..n).collect();
    let u = v.select(&all, &order);
    Ok((u, d))
}

/// One-sided Jacobi on the columns of `m`.
///
/// Returns the rotated columns (mutually orthogonal, norms = singular
/// values) and the accumulated full n×n right rotation `V`.
fn one_sided_jacobi(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (rows, n) = m.shape();
    let mut w = m.clone();
    let mut v = DenseMatrix::identity(n);
    let floor = (f64::EPSILON * m.frobenius_norm()).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in (i + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..rows {
                    let wi = w[(k, i)];
                    let wj = w[(k, j)];
                    alpha += wi * wi;
                    beta += wj * wj;
                    gamma += wi * wj;
                }
                if alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= 1e-15 * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let wi = w[(k, i)];
                    let wj = w[(k, j)];
                    w[(k, i)] = c * wi - s * wj;
                    w[(k, j)] = s * wi + c * wj;
                }
                for k in 0..n {
                    let vi = v[(k, i)];
                    let vj = v[(k, j)];
                    v[(k, i)] = c * vi - s * vj;
                    v[(k, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    Err(Error::NoConvergence {
        algorithm: "one-sided jacobi svd",
        sweeps: MAX_SWEEPS,
    })
}

/// Thin singular value decomposition `M = U diag(σ) Vᵀ`.
///
/// With k = min(m, n), `U` is m×k, `σ` has k descending non-negative
/// entries and `V` is n×k. Columns of `U` paired with zero singular values
/// are completed to an orthonormal set.
pub fn svd(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    if !m.is_finite() {
        return Err(Error::NonFinite(
            m.as_slice().iter().position(|v| !v.is_finite()).unwrap(),
        ));
    }
    let (rows, cols) = m.shape();
    let (w, v) = one_sided_jacobi(m)?;
    let norms: Vec<f64> = (0..cols).map(|j| norm2(&w.col_vec(j))).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let k = rows.min(cols);
    let sigma: Vec<f64> = order[..k].iter().map(|&j| norms[j]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (slot, &j) in order[..k].iter().enumerate() {
        let s = norms[j];
        if s > 1e-14 * smax && s > 0.0 {
            ucols.push(w.col_vec(j).iter().map(|x| x / s).collect());
        } else {
            ucols.push(vec![0.0; rows]);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut ucols, &missing, rows);
    let u = DenseMatrix::from_columns(&ucols, rows);
    let all: Vec<usize> = (0..cols).collect();
    let vk = v.select(&all, &order[..k]);
    Ok((u, sigma, vk))
}

/// Fills the listed slots with unit vectors orthogonal to all other columns.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], dim: usize) {
    for &slot in missing {
        for e in 0..dim {
            let mut cand = DenseMatrix::basis_vector(dim, e);
            for (other, c) in cols.iter().enumerate() {
                if other == slot || (missing.contains(&other) && norm2(c) == 0.0) {
                    continue;
                }
                let p = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= p * y;
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-6 {
                cols[slot] = cand.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

/// Orthonormal basis (as columns) of the nullspace of `m`.
///
/// A right singular vector belongs to the basis when its singular value is
/// below `rel_tol · σ_max`; an all-zero matrix has the full space as its
/// nullspace.
pub fn nullspace(m: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let cols = m.cols();
    let (w, v) = one_sided_jacobi(m)?;
    let norms: Vec<f64> = (0..cols).map(|j| norm2(&w.col_vec(j))).collect();
    let smax = norms.iter().fold(0.0_f64, |a, &b| a.max(b));
    let mut picked: Vec<(f64, usize)> = norms
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s < rel_tol * smax)
        .map(|(j, &s)| (s, j))
        .collect();
    picked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let all: Vec<usize> = (0..cols).collect();
    let idx: Vec<usize> = picked.iter().map(|&(_, j)| j).collect();
    Ok(v.select(&all, &idx))
}

/// Matrix exponential by scaling and squaring with a 16th-order Taylor series.
pub fn mat_exp(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let norm = m.frobenius_norm();
    if !norm.is_finite() || norm > 50.0 {
        return Err(Error::ExpOverflow(norm));
    }
    let n = m.rows();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let x = m.scale(0.5_f64.powi(squarings as i32));
    let mut result = DenseMatrix::identity(n);
    let mut term = DenseMatrix::identity(n);
    for k in 1..=16 {
        term = term.matmul(&x).scale(1.0 / k as f64);
        result = result.add(&term);
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// Largest deviation of `BᵀB` from the identity.
pub fn orthonormality_error(b: &DenseMatrix) -> f64 {
    let g = b.transpose().matmul(b);
    g.sub(&DenseMatrix::identity(b.cols())).max_abs()
}

/// Principal angles between the column spans of two orthonormal bases,
/// ascending in [0, π/2].
pub fn principal_angles(b0: &DenseMatrix, b1: &DenseMatrix) -> Result<Vec<f64>> {
    if b0.shape() != b1.shape() {
        return Err(dim_err(
            format!("{:?}", b0.shape()),
            format!("{:?}", b1.shape()),
        ));
    }
    for b in [b0, b1] {
        let e = orthonormality_error(b);
        if e > 1e-8 {
            return Err(Error::NotOrthonormal(e));
        }
    }
    if b0.cols() == 0 {
        return Ok(Vec::new());
    }
    let c = b0.transpose().matmul(b1);
    let (_, cosines, _) = svd(&c)?;
    // arccos loses accuracy near zero angles; take those from the sines of
    // the residual (I - B0 B0ᵀ) B1 instead.
    let residual = b1.sub(&b0.matmul(&c));
    let (_, mut sines, _) = svd(&residual)?;
    sines.reverse();
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c >= 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Row-major product of an m×k and a k×n operand given by (row, col) strides.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
) -> DenseMatrix {
    let mut out = vec![0.0; m * n];
    if m * n > 0 && k > 0 {
        // SAFETY: the strides describe in-bounds layouts of `a` (m×k) and
        // `b` (k×n), and `out` is a fresh m×n row-major buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    DenseMatrix::from_raw(m, n, out)
}
