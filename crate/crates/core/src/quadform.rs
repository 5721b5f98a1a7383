//! Quadratic forms q(x; A) = xᵀAx with a cached eigendecomposition.

use std::fmt::Write as _;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, sym_eig, DenseMatrix};

/// Relative threshold below which an eigenvalue counts as zero.
pub const ZERO_EIG_REL: f64 = 1e-10;

/// Relative scale of the near-null predicate: |xᵀAx| < NULL_REL·‖A‖_F·‖x‖².
pub const NULL_REL: f64 = 1e-8;

/// Counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Signature {
    pub p: usize,
    pub q: usize,
    pub z: usize,
}

impl Signature {
    pub fn new(p: usize, q: usize, z: usize) -> Self {
        Self { p, q, z }
    }
}

impl std::fmt::Display for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.q, self.z)
    }
}

/// A symmetric matrix A together with `A = U diag(d) Uᵀ` and its signature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    a: DenseMatrix,
    eig_u: DenseMatrix,
    eig_d: Vec<f64>,
    signature: Signature,
}

impl QuadraticForm {
    /// Builds the form ½xᵀ(M + Mᵀ)x from any square matrix.
    pub fn symmetrize(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite(
                m.as_slice().iter().position(|v| !v.is_finite()).unwrap(),
            ));
        }
        let a = m.symmetric_part();
        let (eig_u, eig_d) = sym_eig(&a, 1e-12)?;
        let signature = classify(&eig_d);
        Ok(Self {
            a,
            eig_u,
            eig_d,
            signature,
        })
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self::symmetrize(&DenseMatrix::from_diag(d)).expect("diagonal forms are always valid")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    /// The Minkowski form diag(1, −1, −1, −1).
    pub fn minkowski() -> Self {
        Self::from_diag(&[1.0, -1.0, -1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    /// Orthogonal diagonalizer U with A = U diag(d) Uᵀ.
    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eig_u
    }

    /// Eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig_d
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.a.frobenius_norm()
    }

    pub fn is_invertible(&self) -> bool {
        self.signature.z == 0 && self.frobenius_norm() > 0.0
    }

    /// Eigenvalues with the near-zero ones (per the signature rule) set to 0.
    pub fn clean_eigenvalues(&self) -> Vec<f64> {
        let scale = self.eig_d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.eig_d
            .iter()
            .map(|&v| if v.abs() <= ZERO_EIG_REL * scale { 0.0 } else { v })
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(dim_err(self.dim(), x.len()));
        }
        Ok(())
    }

    /// q(x; A) = xᵀAx.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.a.bilinear(x, x))
    }

    /// xᵀAy.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.a.bilinear(x, y))
    }

    /// Threshold below which |xᵀAx| is treated as lying on the null cone.
    pub fn null_eps(&self, x: &[f64]) -> f64 {
        NULL_REL * self.frobenius_norm() * dot(x, x)
    }

    pub fn is_near_null(&self, x: &[f64]) -> bool {
        let q = self.a.bilinear(x, x);
        q.abs() < self.null_eps(x)
    }

    /// ‖x‖_A = sign(xᵀAx)·√|xᵀAx|, exactly 0 on the near-null set.
    pub fn pseudonorm(&self, x: &[f64]) -> Result<f64> {
        let q = self.eval(x)?;
        if q.abs() < self.null_eps(x) {
            return Ok(0.0);
        }
        Ok(q.signum() * q.abs().sqrt())
    }

    /// x / ‖x‖_A.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let q = self.eval(x)?;
        let threshold = self.null_eps(x);
        if q.abs() < threshold || q == 0.0 {
            return Err(Error::NearNullCone {
                value: q,
                threshold,
            });
        }
        let r = q.signum() * q.abs().sqrt();
        Ok(x.iter().map(|v| v / r).collect())
    }

    /// Gram matrix with entries x_iᵀ A x_j.
    pub fn gram(&self, xs: &[Vec<f64>]) -> Result<DenseMatrix> {
        for x in xs {
            self.check_dim(x)?;
        }
        let p = xs.len();
        let ax: Vec<Vec<f64>> = xs.iter().map(|x| self.a.matvec(x)).collect();
        let mut g = DenseMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = dot(&xs[i], &ax[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Resolves the scale and sign ambiguity of A.
    ///
    /// The result has unit Frobenius norm and a positive eigenvalue of
    /// largest magnitude. When the largest magnitude is attained by both a
    /// positive and a negative eigenvalue the positive one wins, so the
    /// sign is left alone.
    pub fn canonical_gauge(&self) -> Result<Self> {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::ZeroForm);
        }
        let scale = self.eig_d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tie_tol = 1e-9 * scale;
        let top_pos = self.eig_d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let top_neg = self.eig_d.iter().copied().fold(f64::INFINITY, f64::min);
        let flip = if top_pos > 0.0 && (scale - top_pos) <= tie_tol {
            false
        } else {
            top_neg < 0.0
        };
        let factor = if flip { -1.0 / norm } else { 1.0 / norm };
        Ok(self.scaled(factor))
    }

    /// The form c·A, reusing the cached decomposition.
    pub fn scaled(&self, c: f64) -> Self {
        let a = self.a.scale(c);
        let mut eig_d: Vec<f64> = self.eig_d.iter().map(|v| v * c).collect();
        let mut eig_u = self.eig_u.clone();
        if c < 0.0 {
            eig_d.reverse();
            let n = self.dim();
            let rev: Vec<usize> = (0..n).rev().collect();
            let all: Vec<usize> = (0..n).collect();
            eig_u = eig_u.select(&all, &rev);
        }
        let signature = classify(&eig_d);
        Self {
            a,
            eig_u,
            eig_d,
            signature,
        }
    }

    /// Serializes as a `n=<dim>` header followed by comma-separated rows.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.a)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let m = matrix_from_csv(text)?;
        Self::symmetrize(&m)
    }
}

fn classify(d: &[f64]) -> Signature {
    let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut sig = Signature::new(0, 0, 0);
    for &v in d {
        if scale == 0.0 || v.abs() <= ZERO_EIG_REL * scale {
            sig.z += 1;
        } else if v > 0.0 {
            sig.p += 1;
        } else {
            sig.q += 1;
        }
    }
    sig
}

/// Square matrix in the `n=<dim>` CSV block format.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n={}", m.rows());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row_slice(i).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let n: usize = header
        .strip_prefix("n=")
        .ok_or_else(|| Error::Parse(format!("expected `n=<dim>` header, got `{header}`")))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
    let mut rows = Vec::with_capacity(n);
    for line in lines {
        let row = parse_csv_row(line)?;
        if row.len() != n {
            return Err(Error::Parse(format!("row has {} entries, expected {n}", row.len())));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::Parse(format!("{} rows, expected {n}", rows.len())));
    }
    DenseMatrix::from_rows(&rows)
}

/// Parses a vector stored either as one comma-separated line or one value per line.
pub fn vector_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with("n=") {
            continue;
        }
        out.extend(parse_csv_row(line)?);
    }
    if out.is_empty() {
        return Err(Error::Parse("empty vector file".into()));
    }
    Ok(out)
}

fn parse_csv_row(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{}`: {e}", t.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eta() -> QuadraticForm {
        QuadraticForm::minkowski()
    }

    #[test]
    fn symmetrize_examples() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let f = QuadraticForm::symmetrize(&m).unwrap();
        assert_eq!(f.matrix().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        let s = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(QuadraticForm::symmetrize(&s).unwrap().matrix(), &s);
        assert_eq!(eta().signature(), Signature::new(1, 3, 0));
        assert!(QuadraticForm::symmetrize(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eval_examples() {
        assert_eq!(QuadraticForm::identity(2).eval(&[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(eta().eval(&[5.0, 3.0, 0.0, 0.0]).unwrap(), 16.0);
        assert_eq!(eta().eval(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(eta().eval(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn pseudonorm_examples() {
        assert_eq!(eta().pseudonorm(&[5.0, 3.0, 0.0, 0.0]).unwrap(), 4.0);
        assert_eq!(eta().pseudonorm(&[3.0, 5.0, 0.0, 0.0]).unwrap(), -4.0);
        assert_eq!(QuadraticForm::identity(2).pseudonorm(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(eta().pseudonorm(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn normalize_examples() {
        let v = QuadraticForm::identity(2).normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let v = eta().normalize(&[5.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.25, 0.75, 0.0, 0.0]);
        assert!(matches!(
            eta().normalize(&[1.0, 1.0, 0.0, 0.0]),
            Err(Error::NearNullCone { .. })
        ));
    }

    #[test]
    fn gram_examples() {
        let e1 = vec![1.0, 0.0, 0.0, 0.0];
        let e2 = vec![0.0, 1.0, 0.0, 0.0];
        let g = eta().gram(&[e1.clone(), e2]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 0.0, -1.0]);
        let i = QuadraticForm::identity(4);
        assert_eq!(i.gram(&[e1.clone(), e1]).unwrap().as_slice(), &[1.0; 4]);
        let g = eta()
            .gram(&[vec![5.0, 3.0, 0.0, 0.0], vec![3.0, 5.0, 0.0, 0.0]])
            .unwrap();
        assert_eq!(g.as_slice(), &[16.0, 0.0, 0.0, -16.0]);
    }

    #[test]
    fn gauge_examples() {
        let g = eta().scaled(2.0).canonical_gauge().unwrap();
        let want = eta().scaled(0.5);
        assert!(g.matrix().sub(want.matrix()).max_abs() < 1e-15);
        let g = QuadraticForm::from_diag(&[-1.0, -1.0]).canonical_gauge().unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(g.matrix().sub(&DenseMatrix::from_diag(&[s, s])).max_abs() < 1e-15);
        let again = g.canonical_gauge().unwrap();
        assert!(again.matrix().sub(g.matrix()).max_abs() < 1e-15);
        assert_eq!(
            QuadraticForm::from_diag(&[0.0, 0.0]).canonical_gauge(),
            Err(Error::ZeroForm)
        );
    }

    #[test]
    fn gauge_flips_generic_negation() {
        let m = DenseMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, -0.5]]).unwrap();
        let f = QuadraticForm::symmetrize(&m).unwrap();
        let a = f.canonical_gauge().unwrap();
        let b = f.scaled(-3.0).canonical_gauge().unwrap();
        assert!(a.matrix().sub(b.matrix()).max_abs() < 1e-14);
        assert_eq!(b.signature(), Signature::new(1, 1, 0));
    }

    #[test]
    fn csv_round_trip() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.1, -1.0 / 3.0]]).unwrap();
        let f = QuadraticForm::symmetrize(&m).unwrap();
        let text = f.to_csv();
        assert!(text.starts_with("n=2\n"));
        assert_eq!(QuadraticForm::from_csv(&text).unwrap().matrix(), f.matrix());
        assert!(matrix_from_csv("2\n1,0\n0,1").is_err());
        assert!(matrix_from_csv("n=2\n1,0\n").is_err());
    }

    #[test]
    fn signature_of_degenerate_form() {
        let f = QuadraticForm::from_diag(&[1.0, -1.0, 0.0]);
        assert_eq!(f.signature(), Signature::new(1, 1, 1));
        assert!(!f.is_invertible());
    }
}
