//! Symmetry-recovery metrics: Frobenius cosine of forms, Lie algebra bases
//! and the projection distance between them, form recovery from
//! generators, and an equivariance probe for trained models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::group::sample_element;
use crate::model::{Batch, GOrthoNet};
use crate::numerics::{nullspace, principal_angles, DenseMatrix};
use crate::quadform::QuadraticForm;
use crate::tasks::{act_on_target, Dataset};

/// Generators with ‖XᵀA + AX‖_F above this (relative to ‖A‖_F) are rejected.
pub const GENERATOR_TOL: f64 = 1e-6;

/// Relative singular-value cut for the nullspace solves.
pub const NULL_TOL: f64 = 1e-8;

/// Lie-algebra draw scale for [`equivariance_error`].
pub const PROBE_SCALE: f64 = 0.5;

/// ⟨A₁, A₀⟩_F / (‖A₁‖_F‖A₀‖_F) on the forms as given.
pub fn cos_similarity(f0: &QuadraticForm, f1: &QuadraticForm) -> Result<f64> {
    if f0.dim() != f1.dim() {
        return Err(dim_err(f0.dim(), f1.dim()));
    }
    let (n0, n1) = (f0.frobenius_norm(), f1.frobenius_norm());
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::ZeroForm);
    }
    Ok((f0.matrix().frobenius_dot(f1.matrix()) / (n0 * n1)).clamp(-1.0, 1.0))
}

/// Cosine after passing both forms through the canonical gauge.
pub fn gauged_cos(f0: &QuadraticForm, f1: &QuadraticForm) -> Result<f64> {
    cos_similarity(&f0.canonical_gauge()?, &f1.canonical_gauge()?)
}

/// Orthonormal basis of {X : XᵀA + AX = 0}.
#[derive(Debug, Clone)]
pub struct LieBasis {
    generators: Vec<DenseMatrix>,
    form: QuadraticForm,
}

impl LieBasis {
    pub fn generators(&self) -> &[DenseMatrix] {
        &self.generators
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn form(&self) -> &QuadraticForm {
        &self.form
    }

    /// Generators as the columns of an n² × k matrix.
    pub fn as_columns(&self) -> DenseMatrix {
        let n = self.form.dim();
        let cols: Vec<Vec<f64>> = self.generators.iter().map(|g| g.as_slice().to_vec()).collect();
        DenseMatrix::from_columns(&cols, n * n)
    }
}

/// The n²×n² operator vec(X) ↦ vec(XᵀA + AX), row-major vec.
fn lie_operator(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                // (XᵀA)_ij = Σ_k X_ki A_kj
                l[(row, k * n + i)] += a[(k, j)];
                // (AX)_ij = Σ_k A_ik X_kj
                l[(row, k * n + j)] += a[(i, k)];
            }
        }
    }
    l
}

/// Nullspace basis of the Lie-algebra constraint for an invertible form.
pub fn lie_basis(form: &QuadraticForm) -> Result<LieBasis> {
    if !form.is_invertible() {
        return Err(Error::SingularForm);
    }
    let n = form.dim();
    let v = nullspace(&lie_operator(form.matrix()), NULL_TOL)?;
    let scale = form.frobenius_norm();
    let mut generators = Vec::with_capacity(v.cols());
    for c in 0..v.cols() {
        let x = DenseMatrix::from_raw(n, n, v.col_vec(c));
        let res = x
            .transpose()
            .matmul(form.matrix())
            .add(&form.matrix().matmul(&x))
            .frobenius_norm();
        if res > GENERATOR_TOL * scale {
            return Err(Error::NotMember(res));
        }
        generators.push(x);
    }
    Ok(LieBasis {
        generators,
        form: form.clone(),
    })
}

/// A form recovered from generators.
#[derive(Debug, Clone)]
pub struct RecoveredForm {
    /// Gauged solution.
    pub form: QuadraticForm,
    /// Dimension of the solution space.
    pub nullity: usize,
    /// More than one independent symmetric solution exists.
    pub ambiguous: bool,
}

/// Solves XᵀA + AX = 0 for symmetric A across all generators.
pub fn recover_form(generators: &[DenseMatrix]) -> Result<RecoveredForm> {
    let first = generators
        .first()
        .ok_or_else(|| Error::Invalid("no generators".into()))?;
    let n = first.rows();
    if generators.iter().any(|g| g.shape() != (n, n)) {
        return Err(Error::Invalid("generators must share one square shape".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let unknowns = pairs.len();
    let index = |i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        pairs.iter().position(|&p| p == (a, b)).expect("pair exists")
    };
    let mut rows = Vec::with_capacity(generators.len() * n * n * unknowns);
    for x in generators {
        for i in 0..n {
            for j in 0..n {
                let mut row = vec![0.0; unknowns];
                for k in 0..n {
                    row[index(k, j)] += x[(k, i)];
                    row[index(i, k)] += x[(k, j)];
                }
                rows.extend(row);
            }
        }
    }
    let m = DenseMatrix::new(generators.len() * n * n, unknowns, rows)?;
    let v = nullspace(&m, NULL_TOL)?;
    let nullity = v.cols();
    if nullity == 0 {
        return Err(Error::Invalid(
            "generators admit no nonzero invariant form".into(),
        ));
    }
    // columns come in ascending singular value; the first fits best
    let sol = v.col_vec(0);
    let mut a = DenseMatrix::zeros(n, n);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        a[(i, j)] = sol[idx];
        a[(j, i)] = sol[idx];
    }
    let form = QuadraticForm::symmetrize(&a)?.canonical_gauge()?;
    Ok(RecoveredForm {
        form,
        nullity,
        ambiguous: nullity > 1,
    })
}

/// √(Σ sin²θ_i) over the principal angles between two algebras.
pub fn projection_distance(b0: &LieBasis, b1: &LieBasis) -> Result<f64> {
    if b0.dim() != b1.dim() || b0.form.dim() != b1.form.dim() {
        return Err(dim_err(b0.dim(), b1.dim()));
    }
    if b0.dim() == 0 {
        return Ok(0.0);
    }
    let angles = principal_angles(&b0.as_columns(), &b1.as_columns())?;
    Ok(angles.iter().map(|t| t.sin().powi(2)).sum::<f64>().sqrt())
}

/// d_PA between the algebras of two forms, or the reason it is undefined.
pub fn form_projection_distance(
    f0: &QuadraticForm,
    f1: &QuadraticForm,
) -> std::result::Result<f64, String> {
    let b0 = lie_basis(f0).map_err(|e| format!("true form: {e}"))?;
    let b1 = lie_basis(f1).map_err(|_| "learned form is numerically singular".to_string())?;
    projection_distance(&b0, &b1).map_err(|e| e.to_string())
}

/// Mean action-appropriate equivariance residual of a model over the
/// samples of `data`, one sampled g per sample, normalized by the RMS
/// norm of the predictions.
pub fn equivariance_error<R: Rng + ?Sized>(
    model: &mut GOrthoNet,
    true_form: &QuadraticForm,
    data: &Dataset,
    rng: &mut R,
) -> Result<f64> {
    if !true_form.is_invertible() {
        return Err(Error::SingularForm);
    }
    if data.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    let n = true_form.dim();
    let (batch, _) = data.all();
    let mut moved = batch.x.clone();
    let mut gs = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let g = sample_element(true_form, rng, PROBE_SCALE)?;
        for p in 0..data.points {
            let y = g.apply(data.point(i, p));
            moved.as_mut_slice()[i * n * data.points + p * n..][..n].copy_from_slice(&y);
        }
        let g_inv = g.inverse()?;
        gs.push((g, g_inv));
    }
    let base = model.forward_batch(&batch)?;
    let shifted = model.forward_batch(&Batch {
        x: moved,
        masses: batch.masses.clone(),
    })?;
    let mut total = 0.0;
    let mut scale = 0.0;
    for (i, (g, g_inv)) in gs.iter().enumerate() {
        let want = act_on_target(model.config().action, g.matrix(), g_inv.matrix(), base.row_slice(i));
        let diff: f64 = shifted
            .row_slice(i)
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        total += diff;
        scale += base.row_slice(i).iter().map(|v| v * v).sum::<f64>();
    }
    let rms = (scale / data.len() as f64).sqrt();
    Ok(total / data.len() as f64 / rms.max(f64::MIN_POSITIVE))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// `None` is written as `undefined`.
    pub value: Option<f64>,
    pub gauge: String,
    pub notes: String,
}

impl MetricRow {
    pub fn new(metric: &str, value: Option<f64>, gauge: &str, notes: &str) -> Self {
        Self {
            metric: metric.into(),
            value,
            gauge: gauge.into(),
            notes: notes.into(),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders rows with the header `metric,value,gauge,notes`.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,value,gauge,notes\n");
    for r in rows {
        let value = r.value.map_or_else(|| "undefined".to_string(), |v| format!("{v:?}"));
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.metric),
            value,
            csv_field(&r.gauge),
            csv_field(&r.notes)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::element_from_skew;

    #[test]
    fn cos_examples() {
        let a = QuadraticForm::from_diag(&[1.0, -2.0, 0.5]);
        assert!((cos_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg = a.scaled(-1.0);
        assert!((cos_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((gauged_cos(&a, &neg).unwrap() - 1.0).abs() < 1e-12);
        let z = QuadraticForm::from_diag(&[0.0, 0.0, 0.0]);
        assert_eq!(cos_similarity(&a, &z), Err(Error::ZeroForm));
    }

    #[test]
    fn rotation_algebra() {
        let b = lie_basis(&QuadraticForm::identity(3)).unwrap();
        assert_eq!(b.dim(), 3);
        for g in b.generators() {
            assert!(g.add(&g.transpose()).max_abs() < 1e-12);
        }
    }

    #[test]
    fn lorentz_algebra_exponentiates_into_group() {
        let eta = QuadraticForm::minkowski();
        let b = lie_basis(&eta).unwrap();
        assert_eq!(b.dim(), 6);
        for x in b.generators() {
            // exp(0.3X) with K = A·X skew
            let k = eta.matrix().matmul(&x.scale(0.3));
            let k = k.sub(&k.transpose()).scale(0.5);
            element_from_skew(&eta, &k).unwrap();
        }
    }

    #[test]
    fn singular_form_rejected() {
        let f = QuadraticForm::from_diag(&[1.0, 0.0]);
        assert!(matches!(lie_basis(&f), Err(Error::SingularForm)));
    }

    #[test]
    fn recover_examples() {
        let so3 = lie_basis(&QuadraticForm::identity(3)).unwrap();
        let r = recover_form(so3.generators()).unwrap();
        assert!(!r.ambiguous);
        assert!(gauged_cos(&r.form, &QuadraticForm::identity(3)).unwrap() > 1.0 - 1e-12);

        let eta = QuadraticForm::minkowski();
        let r = recover_form(lie_basis(&eta).unwrap().generators()).unwrap();
        assert!(gauged_cos(&r.form, &eta).unwrap().abs() >= 0.999);

        let j = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let r = recover_form(&[j]).unwrap();
        assert!(gauged_cos(&r.form, &QuadraticForm::identity(2)).unwrap() > 1.0 - 1e-12);
        assert_eq!(r.ambiguous, r.nullity > 1);
        assert!(recover_form(&[]).is_err());
    }

    #[test]
    fn projection_distance_examples() {
        let b = lie_basis(&QuadraticForm::minkowski()).unwrap();
        assert!(projection_distance(&b, &b).unwrap() < 1e-8);
        let b3 = lie_basis(&QuadraticForm::identity(3)).unwrap();
        assert!(projection_distance(&b, &b3).is_err());
    }

    #[test]
    fn csv_rendering() {
        let rows = [
            MetricRow::new("cos", Some(0.5), "canonical", ""),
            MetricRow::new("d_pa", None, "canonical", "learned form is singular, see notes"),
        ];
        let s = metrics_csv(&rows);
        assert_eq!(
            s,
            "metric,value,gauge,notes\ncos,0.5,canonical,\nd_pa,undefined,canonical,\"learned form is singular, see notes\"\n"
        );
    }
}
