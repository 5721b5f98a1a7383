//! The form-preserving group G = {g : gᵀAg = A}.
//!
//! Membership certification, sampling through the Lie algebra, A-orthogonal
//! Householder reflections and the constructive canonical alignment that
//! maps any non-null vector onto a coordinate axis of the diagonal gauge.
//!
//! The alignment follows a four-step pipeline on the diagonalized form
//! D = diag(d):
//!
//! 1. inside each definite block (positive, negative) rescale by √|d| and
//!    rotate onto the block's first axis;
//! 2. rotate the zero block onto its first axis (any orthogonal map works
//!    there since D vanishes on it);
//! 3. absorb the zero-block coordinate into a signed axis with the shear
//!    `E₁₁ + d₁ab·E_k1 − d₁a²·E_kk + Σ E_ii`;
//! 4. remove the remaining positive/negative pair with a hyperbolic boost.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, mat_exp, norm2, DenseMatrix};
use crate::quadform::QuadraticForm;

/// Membership tolerance, relative to ‖A‖_F.
pub const MEMBER_TOL: f64 = 1e-8;

/// Looser tolerance used when re-certifying products and inverses.
pub const CLOSURE_TOL: f64 = 1e-7;

/// Relative guard on the Householder denominator |wᵀAw|.
pub const HOUSEHOLDER_REL: f64 = 1e-8;

/// A matrix certified to preserve a quadratic form.
#[derive(Debug, Clone)]
pub struct GroupElement {
    g: DenseMatrix,
    form: QuadraticForm,
    residual: f64,
}

impl GroupElement {
    /// Certifies `g` against `form` with tolerance `tol·‖A‖_F`.
    pub fn certify(form: &QuadraticForm, g: DenseMatrix, tol: f64) -> Result<Self> {
        let (ok, residual) = is_member(form, &g, tol)?;
        if !ok {
            return Err(Error::NotMember(residual));
        }
        let det = g.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::Singular);
        }
        Ok(Self {
            g,
            form: form.clone(),
            residual,
        })
    }

    /// Certifies with the tolerance widened by max(1, ‖g‖_F²/n), the scale at
    /// which roundoff enters gᵀAg for strongly boosted elements.
    pub fn certify_relative(form: &QuadraticForm, g: DenseMatrix, tol: f64) -> Result<Self> {
        let n = form.dim().max(1) as f64;
        let growth = (g.frobenius_norm().powi(2) / n).max(1.0);
        Self::certify(form, g, tol * growth)
    }

    pub fn identity(form: &QuadraticForm) -> Self {
        Self {
            g: DenseMatrix::identity(form.dim()),
            form: form.clone(),
            residual: 0.0,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn form(&self) -> &QuadraticForm {
        &self.form
    }

    /// ‖gᵀAg − A‖_F at construction.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.g.matvec(x)
    }

    /// self · other, re-certified.
    pub fn compose(&self, other: &GroupElement) -> Result<Self> {
        if self.form.matrix() != other.form.matrix() {
            return Err(Error::Invalid("elements preserve different forms".into()));
        }
        Self::certify(&self.form, self.g.matmul(&other.g), CLOSURE_TOL)
    }

    pub fn inverse(&self) -> Result<Self> {
        Self::certify(&self.form, self.g.inverse()?, CLOSURE_TOL)
    }
}

/// Checks ‖gᵀAg − A‖_F ≤ tol·‖A‖_F, returning the verdict and the residual.
pub fn is_member(form: &QuadraticForm, g: &DenseMatrix, tol: f64) -> Result<(bool, f64)> {
    if !g.is_square() {
        return Err(Error::NotSquare {
            rows: g.rows(),
            cols: g.cols(),
        });
    }
    if g.rows() != form.dim() {
        return Err(dim_err(form.dim(), g.rows()));
    }
    let a = form.matrix();
    let residual = g.transpose().matmul(a).matmul(g).sub(a).frobenius_norm();
    Ok((residual <= tol * form.frobenius_norm(), residual))
}

/// exp(A⁻¹K) for a skew-symmetric K, certified as a group element.
///
/// Since AX = K is skew, X satisfies XᵀA + AX = 0 and lies in the Lie
/// algebra of the group.
pub fn element_from_skew(form: &QuadraticForm, k: &DenseMatrix) -> Result<GroupElement> {
    if !form.is_invertible() {
        return Err(Error::SingularForm);
    }
    if k.shape() != (form.dim(), form.dim()) {
        return Err(dim_err(form.dim(), format!("{:?}", k.shape())));
    }
    let skew_err = k.add(&k.transpose()).max_abs();
    if skew_err > 1e-12 * k.max_abs().max(1.0) {
        return Err(Error::Invalid(format!("generator is not skew ({skew_err:e})")));
    }
    let x = form.matrix().inverse()?.matmul(k);
    GroupElement::certify(form, mat_exp(&x)?, MEMBER_TOL)
}

/// Draws exp(A⁻¹K) with K skew and K_ij ~ Normal(0, scale²) for i < j.
pub fn sample_element<R: Rng + ?Sized>(
    form: &QuadraticForm,
    rng: &mut R,
    scale: f64,
) -> Result<GroupElement> {
    if !(0.0..=3.0).contains(&scale) {
        return Err(Error::Invalid(format!("sampling scale {scale} outside [0, 3]")));
    }
    if !form.is_invertible() {
        return Err(Error::SingularForm);
    }
    let n = form.dim();
    let normal = Normal::new(0.0, scale.max(f64::MIN_POSITIVE)).expect("valid std dev");
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if scale == 0.0 { 0.0 } else { normal.sample(rng) };
            k[(i, j)] = v;
            k[(j, i)] = -v;
        }
    }
    element_from_skew(form, &k)
}

/// The A-orthogonal reflection R = I − 2wwᵀA/(wᵀAw).
pub fn a_householder(form: &QuadraticForm, w: &[f64]) -> Result<GroupElement> {
    if w.len() != form.dim() {
        return Err(dim_err(form.dim(), w.len()));
    }
    let aw = form.matrix().matvec(w);
    let s = dot(w, &aw);
    let threshold = HOUSEHOLDER_REL * form.frobenius_norm() * dot(w, w);
    if s.abs() < threshold || s == 0.0 {
        return Err(Error::NearNullDirection {
            value: s,
            threshold,
        });
    }
    let n = form.dim();
    let mut r = DenseMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] -= 2.0 * w[i] * aw[j] / s;
        }
    }
    GroupElement::certify(form, r, MEMBER_TOL)
}

/// An alignment `W x = γ e_axis` with W preserving the form.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    w: GroupElement,
    gamma: f64,
    target_axis: usize,
    alignment_residual: f64,
}

impl AlignmentResult {
    fn build(w: GroupElement, x: &[f64], gamma: f64, target_axis: usize) -> Result<Self> {
        let wx = w.apply(x);
        let mut target = vec![0.0; x.len()];
        target[target_axis] = gamma;
        let alignment_residual = norm2(
            &wx.iter()
                .zip(&target)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if alignment_residual > 1e-8 * norm2(x).max(f64::MIN_POSITIVE) {
            return Err(Error::AlignmentPrecondition(format!(
                "aligned vector misses γe_{target_axis} by {alignment_residual:e}"
            )));
        }
        Ok(Self {
            w,
            gamma,
            target_axis,
            alignment_residual,
        })
    }

    pub fn w(&self) -> &GroupElement {
        &self.w
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Zero-based index of the axis the vector lands on.
    pub fn target_axis(&self) -> usize {
        self.target_axis
    }

    /// ‖Wx − γe_axis‖.
    pub fn alignment_residual(&self) -> f64 {
        self.alignment_residual
    }

    /// Membership residual ‖WᵀDW − D‖_F.
    pub fn membership_residual(&self) -> f64 {
        self.w.residual()
    }
}

/// Orthogonal map taking `y` to ‖y‖e₀ (identity if already there).
fn euclidean_to_axis(y: &[f64]) -> DenseMatrix {
    let k = y.len();
    let beta = norm2(y);
    let mut h = DenseMatrix::identity(k);
    let mut v = y.to_vec();
    // reflect along y + sign(y₀)βe₀ to avoid cancellation, then fix the sign
    let flip = y[0] >= 0.0;
    v[0] += if flip { beta } else { -beta };
    let vv = dot(&v, &v);
    let off_axis: f64 = y[1..].iter().map(|t| t * t).sum();
    if off_axis <= (1e-15 * beta).powi(2) && y[0] >= 0.0 {
        return h;
    }
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] -= 2.0 * v[i] * v[j] / vv;
        }
    }
    if flip {
        for j in 0..k {
            h[(0, j)] = -h[(0, j)];
        }
    }
    h
}

/// Block matrix acting as `block` on coordinates `idx` and identity elsewhere.
fn embed(n: usize, idx: &[usize], block: &DenseMatrix) -> DenseMatrix {
    let mut m = DenseMatrix::identity(n);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            m[(i, j)] = block[(a, b)];
        }
    }
    m
}

/// Raw matrix for [`align_definite`]: `S⁻¹ H S` with S = √|D|.
fn definite_matrix(d: &[f64], x: &[f64]) -> (DenseMatrix, f64) {
    let k = d.len();
    let s: Vec<f64> = d.iter().map(|v| v.abs().sqrt()).collect();
    let y: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a * b).collect();
    let beta = norm2(&y);
    let h = euclidean_to_axis(&y);
    let mut w = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            w[(i, j)] = h[(i, j)] * s[j] / s[i];
        }
    }
    (w, beta / s[0])
}

/// Aligns `x` with e₀ inside a definite diagonal form (all d of one sign).
pub fn align_definite(d: &[f64], x: &[f64]) -> Result<AlignmentResult> {
    if d.len() != x.len() || d.is_empty() {
        return Err(dim_err(d.len(), x.len()));
    }
    let all_pos = d.iter().all(|&v| v > 0.0);
    let all_neg = d.iter().all(|&v| v < 0.0);
    if !all_pos && !all_neg {
        return Err(Error::AlignmentPrecondition(
            "definite alignment needs all diagonal entries of one strict sign".into(),
        ));
    }
    if norm2(x) == 0.0 {
        return Err(Error::AlignmentPrecondition("zero vector".into()));
    }
    let (w, alpha) = definite_matrix(d, x);
    let form = QuadraticForm::from_diag(d);
    AlignmentResult::build(GroupElement::certify(&form, w, MEMBER_TOL)?, x, alpha, 0)
}

/// Raw shear `E₀₀ + d₀ab·E_k0 − d₀a²·E_kk + Σ_{i≠0,k} E_ii`.
fn semidefinite_matrix(n: usize, d0: f64, a: f64, b: f64, k: usize) -> DenseMatrix {
    let mut w = DenseMatrix::identity(n);
    w[(k, 0)] = d0 * a * b;
    w[(k, k)] = -d0 * a * a;
    w
}

/// Sends `y = a e₀ + b e_k` to `a e₀` when d_k = 0 (zero-based `k ≥ 1`).
///
/// Entries of `d` before `k` carry one strict sign; the shear only touches
/// rows 0 and k, and row k is invisible to D because d_k vanishes.
pub fn align_semidefinite(d: &[f64], a: f64, b: f64, k: usize) -> Result<AlignmentResult> {
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::AlignmentPrecondition(format!(
            "merge axis {k} must lie in 1..{n}"
        )));
    }
    if d[k] != 0.0 {
        return Err(Error::AlignmentPrecondition(format!(
            "d[{k}] = {} is not zero",
            d[k]
        )));
    }
    if d[0] == 0.0 {
        return Err(Error::AlignmentPrecondition("d[0] must be nonzero".into()));
    }
    if a == 0.0 {
        return Err(Error::AlignmentPrecondition(
            "a = 0 makes the shear singular".into(),
        ));
    }
    let w = semidefinite_matrix(n, d[0], a, b, k);
    let mut y = vec![0.0; n];
    y[0] = a;
    y[k] = b;
    let form = QuadraticForm::from_diag(d);
    let ge = GroupElement::certify(&form, w, MEMBER_TOL)?;
    // a may be negative; the shear keeps it in place
    AlignmentResult::build(ge, &y, a, 0)
}

/// Hyperbolic boost on the (0, k) plane taking `a e₀ + b e_k` to a single axis.
fn indefinite_matrix(n: usize, d0: f64, dk: f64, a: f64, b: f64, k: usize) -> (DenseMatrix, f64, usize) {
    let s0 = d0.sqrt();
    let sk = dk.abs().sqrt();
    let u = s0 * a;
    let v = sk * b;
    let value = u * u - v * v;
    let beta = 1.0 / value.abs().sqrt();
    // R acts on the √|D|-scaled coordinates; W = S⁻¹ R S
    let (r00, r0k, rk0, rkk) = if value > 0.0 {
        (beta * u, -beta * v, -beta * v, beta * u)
    } else {
        (beta * v, -beta * u, -beta * u, beta * v)
    };
    let mut w = DenseMatrix::identity(n);
    w[(0, 0)] = r00;
    w[(0, k)] = r0k * sk / s0;
    w[(k, 0)] = rk0 * s0 / sk;
    w[(k, k)] = rkk;
    if value > 0.0 {
        (w, value.sqrt() / s0, 0)
    } else {
        (w, (-value).sqrt() / sk, k)
    }
}

/// Aligns `x = a e₀ + b e_k` with e₀ (positive value) or e_k (negative value)
/// for d₀ > 0 > d_k.
pub fn align_indefinite(d: &[f64], k: usize, a: f64, b: f64) -> Result<AlignmentResult> {
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::AlignmentPrecondition(format!(
            "boost axis {k} must lie in 1..{n}"
        )));
    }
    if !(d[0] > 0.0 && d[k] < 0.0) {
        return Err(Error::AlignmentPrecondition(format!(
            "need d[0] > 0 > d[{k}], got {} and {}",
            d[0], d[k]
        )));
    }
    let mut x = vec![0.0; n];
    x[0] = a;
    x[k] = b;
    let form = QuadraticForm::from_diag(d);
    let value = d[0] * a * a + d[k] * b * b;
    let threshold = form.null_eps(&x);
    if value.abs() < threshold || value == 0.0 {
        return Err(Error::NearNullCone { value, threshold });
    }
    let (w, gamma, axis) = indefinite_matrix(n, d[0], d[k], a, b, k);
    AlignmentResult::build(GroupElement::certify(&form, w, MEMBER_TOL)?, &x, gamma, axis)
}

/// Runs the full four-step alignment for a form that is already diagonal.
///
/// The result satisfies `W x = γ e_t` where t is the first positive axis
/// when xᵀDx > 0 and the first negative axis otherwise; γ > 0.
pub fn canonical_align(form: &QuadraticForm, x: &[f64]) -> Result<AlignmentResult> {
    let n = form.dim();
    if x.len() != n {
        return Err(dim_err(n, x.len()));
    }
    let a = form.matrix();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] != 0.0 {
                return Err(Error::Invalid(
                    "canonical_align expects a form in diagonal gauge".into(),
                ));
            }
        }
    }
    let scale = a.max_abs();
    let d: Vec<f64> = a
        .diag()
        .iter()
        .map(|&v| if v.abs() <= crate::quadform::ZERO_EIG_REL * scale { 0.0 } else { v })
        .collect();
    let diag_form = QuadraticForm::from_diag(&d);
    let value = diag_form.eval(x)?;
    let threshold = diag_form.null_eps(x);
    if value.abs() < threshold || value == 0.0 {
        return Err(Error::NearNullCone { value, threshold });
    }

    let pos: Vec<usize> = (0..n).filter(|&i| d[i] > 0.0).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| d[i] < 0.0).collect();
    let zero: Vec<usize> = (0..n).filter(|&i| d[i] == 0.0).collect();

    // Step 1 and 2: per-block alignment onto each block's first axis.
    let mut a1 = DenseMatrix::identity(n);
    let mut coeff = |idx: &[usize], euclid: bool| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let xb: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        if norm2(&xb) == 0.0 {
            return 0.0;
        }
        let (block, c) = if euclid {
            (euclidean_to_axis(&xb), norm2(&xb))
        } else {
            let db: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
            definite_matrix(&db, &xb)
        };
        let e = embed(n, idx, &block);
        a1 = e.matmul(&a1);
        c
    };
    let a_pos = coeff(&pos, false);
    let a_neg = coeff(&neg, false);
    let a_zero = coeff(&zero, true);
    let mut w = a1;

    // Step 3: fold the zero-block coordinate into a signed axis.
    if a_zero != 0.0 {
        let z0 = zero[0];
        let (host, host_coeff) = if a_neg != 0.0 {
            (neg[0], a_neg)
        } else if a_pos != 0.0 {
            (pos[0], a_pos)
        } else {
            return Err(Error::NearNullCone { value, threshold });
        };
        let shear = semidefinite_matrix(2, d[host], host_coeff, a_zero, 1);
        w = embed(n, &[host, z0], &shear).matmul(&w);
    }

    // Step 4: boost the positive/negative pair onto one axis.
    let (gamma, axis) = match (a_pos != 0.0, a_neg != 0.0) {
        (true, true) => {
            let (boost, gamma, local) =
                indefinite_matrix(2, d[pos[0]], d[neg[0]], a_pos, a_neg, 1);
            w = embed(n, &[pos[0], neg[0]], &boost).matmul(&w);
            (gamma, if local == 0 { pos[0] } else { neg[0] })
        }
        (true, false) => (a_pos, pos[0]),
        (false, true) => (a_neg, neg[0]),
        (false, false) => return Err(Error::NearNullCone { value, threshold }),
    };
    if (value > 0.0) != (d[axis] > 0.0) {
        return Err(Error::AlignmentPrecondition(
            "aligned axis disagrees with the sign of xᵀDx".into(),
        ));
    }
    let ge = GroupElement::certify(&diag_form, w, MEMBER_TOL)?;
    AlignmentResult::build(ge, x, gamma, axis)
}

/// A group element W with W x = y for two vectors of equal pseudonorm.
///
/// Both vectors are aligned in the eigenbasis of A, the two alignments are
/// composed, and the result is conjugated back into the original basis.
pub fn transport(form: &QuadraticForm, x: &[f64], y: &[f64]) -> Result<GroupElement> {
    let nx = form.pseudonorm(x)?;
    let ny = form.pseudonorm(y)?;
    if nx == 0.0 || ny == 0.0 {
        let bad = if nx == 0.0 { x } else { y };
        let value = form.eval(bad)?;
        return Err(Error::NearNullCone {
            value,
            threshold: form.null_eps(bad),
        });
    }
    if (nx - ny).abs() > 1e-6 * nx.abs().max(ny.abs()) {
        return Err(Error::NormMismatch(nx, ny));
    }
    let u = form.eigenvectors();
    let ut = u.transpose();
    let diag_form = QuadraticForm::from_diag(&form.clean_eigenvalues());
    let ax = canonical_align(&diag_form, &ut.matvec(x))?;
    let ay = canonical_align(&diag_form, &ut.matvec(y))?;
    if ax.target_axis() != ay.target_axis() {
        return Err(Error::NormMismatch(nx, ny));
    }
    let wy_inv = ay.w().matrix().inverse()?;
    let local = wy_inv.matmul(ax.w().matrix());
    let g = u.matmul(&local).matmul(&ut);
    let ge = GroupElement::certify(form, g, CLOSURE_TOL)?;
    let gx = ge.apply(x);
    let miss = norm2(&gx.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
    if miss > 1e-6 * norm2(y) {
        return Err(Error::AlignmentPrecondition(format!(
            "transport misses target by {miss:e}"
        )));
    }
    Ok(ge)
}

/// True iff both vectors are off the null cone and share a pseudonorm level set.
pub fn orbit_equivalent(form: &QuadraticForm, x: &[f64], y: &[f64], tol: f64) -> bool {
    let (Ok(nx), Ok(ny)) = (form.pseudonorm(x), form.pseudonorm(y)) else {
        return false;
    };
    if nx == 0.0 || ny == 0.0 {
        return false;
    }
    (nx - ny).abs() <= tol * nx.abs().max(ny.abs()).max(1.0)
}
