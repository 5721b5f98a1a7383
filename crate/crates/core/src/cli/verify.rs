//! Executable versions of every module invariant, grouped into suites.
//!
//! Each check reports the worst residual it measured against its
//! tolerance. `verify all` additionally asserts that every entry of
//! [`CHECKLIST`] was exercised.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Axis, Guard, Tape};
use crate::error::{Error, Result};
use crate::group::{a_householder, canonical_align, orbit_equivalent, sample_element, transport, GroupElement};
use crate::metrics::{gauged_cos, lie_basis, projection_distance, recover_form};
use crate::model::{Action, Batch, FormInit, FormSource, GOrthoNet, InputMode, LearnableForm, NetConfig};
use crate::numerics::{mat_exp, orthonormality_error, principal_angles, svd, sym_eig, DenseMatrix};
use crate::quadform::QuadraticForm;
use crate::tasks::{
    act_on_target, gen_inertia, gen_lorentz_cls, gen_synthetic_o22, random_rotation, Dataset, LORENTZ_THRESHOLD,
    NULL_MARGIN,
};
use crate::training::{evaluate, inject_label_noise, median_sample_loss, split, train, LrSchedule, TrainConfig};

use super::{run_single, ExperimentConfig};

/// Suite names accepted by `verify`.
pub const SUITES: &[&str] = &[
    "numerics", "quadform", "group", "autodiff", "model", "training", "tasks", "metrics", "cli",
];

/// Every invariant of every module, as (suite, check id, statement).
pub const CHECKLIST: &[(&str, &str, &str)] = &[
    ("numerics", "matrix_construction", "entries length = rows × cols and all entries finite"),
    ("numerics", "sym_eig_reconstruction", "‖M − U diag(d) Uᵀ‖_F ≤ 1e-9‖M‖_F, 1000 symmetric n ≤ 8"),
    ("numerics", "svd_reconstruction", "svd reconstruction and orthogonality, 1000 cases"),
    ("numerics", "mat_exp_inverse", "exp(M)exp(−M) = I within 1e-8 for ‖M‖_F ≤ 5"),
    ("numerics", "principal_angles_symmetric", "principal_angles symmetric in its arguments"),
    ("quadform", "form_type", "A = Aᵀ exactly, eigen-reconstruction ≤ 1e-9‖A‖_F, p + q + z = n"),
    ("quadform", "pseudonorm_invariance", "pseudonorm(g·x) = pseudonorm(x) within 1e-8"),
    ("quadform", "gram_invariance", "Gram matrix invariant under the diagonal action within 1e-8"),
    ("quadform", "normalize_unit", "quad_eval(normalize(x)) = ±1 within 1e-10"),
    ("quadform", "gauge_idempotent", "canonical_gauge is idempotent"),
    ("group", "certification", "sampled elements satisfy ‖gᵀAg − A‖_F ≤ 1e-8‖A‖_F and |det| = 1"),
    ("group", "closure", "products and inverses re-certify within 1e-7‖A‖_F, chains ≤ 8"),
    ("group", "householder_self_inverse", "R·R = I and RᵀAR = A within 1e-10"),
    ("group", "alignment", "canonical_align: ‖Wx − γe_t‖ ≤ 1e-8‖x‖, γ matches the pseudonorm"),
    ("group", "align_idempotent", "aligning γe_t returns W with Wγe_t = γe_t"),
    ("group", "transport_round_trip", "transport(x,y)·transport(y,x)·x = x within 1e-6"),
    ("group", "orbit_equivalence", "orbit_equivalent(x, g·x) for 1000 sampled g"),
    ("autodiff", "graph_order", "inputs precede consumers; backward visits in reverse order"),
    ("autodiff", "sqrt_guard", "sqrt-abs-signed is sign(u)√|u| with zero subgradient in the guard band"),
    ("autodiff", "grad_check_fuzz", "grad_check ≤ 1e-4 on 50 random graphs"),
    ("autodiff", "backward_linear", "backward(a·S) = a·backward(S)"),
    ("autodiff", "forward_replay", "forward replay is bit-exact"),
    ("model", "mlp_shapes", "consecutive layer shapes compatible; φ_s absent in invariant mode"),
    ("model", "realize_orthogonality", "‖UᵀU − I‖_F ≤ 1e-10 and A symmetric, 1000 draws"),
    ("model", "reflection_membership", "every emitted R satisfies ‖RᵀAR − A‖_F ≤ 1e-9‖A‖_F and R·R = I"),
    ("model", "exact_invariance", "invariant mode with the true form: |f(gx) − f(x)| ≤ 1e-8"),
    ("model", "tuple_gram_invariance", "tuple-mode features unchanged under the diagonal action"),
    ("model", "gradient_flow", "grad_check over the full forward ≤ 1e-4"),
    ("model", "representability", "frozen-form conjugation model fits Task 1 to train MSE ≤ 1e-3"),
    ("training", "config_rates", "rates must be positive"),
    ("training", "history_lengths", "history lengths equal epochs"),
    ("training", "seed_determinism", "identical config and data give bit-identical parameter blobs"),
    ("training", "loss_not_increased", "final train loss ≤ initial train loss"),
    ("training", "noise_inputs_untouched", "inject_label_noise leaves inputs bit-identical"),
    ("training", "noise_statistics", "noise std within 5% of σ for σ ∈ {0.5, 1.0}"),
    ("training", "median_sample_loss", "median per-sample loss equals the middle single-sample loss"),
    ("training", "keep_best_restores", "keep_best leaves the parameters of the lowest validation loss"),
    ("training", "lr_schedule", "cosine schedule decays 1 → 0 monotonically; constant stays 1"),
    ("tasks", "non_null_inputs", "every input has |xᵀA₀x| ≥ 0.1"),
    ("tasks", "formula_recomputation", "targets match an independent recomputation"),
    ("tasks", "data_equivariance", "200 transformed pairs satisfy the task equation within 1e-8"),
    ("metrics", "generator_residuals", "‖XᵀA + AX‖_F ≤ 1e-6‖A‖_F and vec-orthonormal within 1e-8"),
    ("metrics", "lie_dimension", "lie_basis dimension n(n−1)/2 for n ∈ 2..6"),
    ("metrics", "recover_identity", "recover_form ∘ lie_basis gives |cos| ≥ 0.999, n ≤ 5"),
    ("metrics", "projection_metric", "projection distance symmetric, zero iff equal span, √k when orthogonal"),
    ("cli", "config_round_trip", "resolved config serializes and parses back unchanged"),
    ("cli", "restart_validation", "form_restarts ≥ 1 and warm-up within the epoch budget when restarting"),
    ("cli", "report_reproducible", "re-running the embedded config reproduces every metric bit-for-bit"),
    ("cli", "coverage", "verify all covers every listed invariant"),
];

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub id: &'static str,
    pub passed: bool,
    /// Worst measured residual (or the measured quantity).
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}/{}\tresidual={:e}\ttol={:e}\t{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.id,
            self.residual,
            self.tolerance,
            self.detail
        )
    }
}

fn check(suite: &'static str, id: &'static str, residual: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check {
        suite,
        id,
        passed: residual.is_finite() && residual <= tolerance,
        residual,
        tolerance,
        detail: detail.into(),
    }
}

fn failed(suite: &'static str, id: &'static str, tolerance: f64, e: &Error) -> Check {
    Check {
        suite,
        id,
        passed: false,
        residual: f64::INFINITY,
        tolerance,
        detail: format!("error: {e}"),
    }
}

/// Runs `f` and converts an error into a failed check.
fn guarded(suite: &'static str, id: &'static str, tolerance: f64, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| failed(suite, id, tolerance, &e))
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let m = DenseMatrix::new(n, n, gaussian(rng, n * n)).expect("finite");
    m.add(&m.transpose()).scale(0.5)
}

/// Random symmetric form with eigenvalues bounded away from zero.
fn random_invertible_form(rng: &mut ChaCha8Rng, n: usize) -> QuadraticForm {
    let q = random_rotation(n, rng);
    let d: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let a = q.transpose().matmul(&DenseMatrix::from_diag(&d)).matmul(&q);
    QuadraticForm::symmetrize(&a).expect("finite")
}

fn non_null(rng: &mut ChaCha8Rng, form: &QuadraticForm) -> Vec<f64> {
    loop {
        let x = gaussian(rng, form.dim());
        if form.eval(&x).map(|q| q.abs() >= 0.1).unwrap_or(false) {
            return x;
        }
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs one suite by name.
pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Ok(match name {
        "numerics" => numerics(&mut rng),
        "quadform" => quadform(&mut rng),
        "group" => group(&mut rng),
        "autodiff" => autodiff(&mut rng),
        "model" => model(&mut rng),
        "training" => training(&mut rng),
        "tasks" => tasks(&mut rng),
        "metrics" => metrics(&mut rng),
        "cli" => cli(),
        other => {
            return Err(Error::Invalid(format!(
                "unknown suite `{other}` (expected one of: all, {})",
                SUITES.join(", ")
            )))
        }
    })
}

/// Runs every suite and appends the coverage check.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();
    for s in SUITES {
        out.extend(run_suite(s).expect("listed suites exist"));
    }
    out.push(coverage(&out));
    out
}

/// Compares executed check ids against [`CHECKLIST`].
pub fn coverage(done: &[Check]) -> Check {
    let ran: BTreeSet<(&str, &str)> = done.iter().map(|c| (c.suite, c.id)).collect();
    let missing: Vec<String> = CHECKLIST
        .iter()
        .filter(|(s, id, _)| !(*s == "cli" && *id == "coverage") && !ran.contains(&(*s, *id)))
        .map(|(s, id, _)| format!("{s}/{id}"))
        .collect();
    let total = CHECKLIST.len() - 1;
    check(
        "cli",
        "coverage",
        missing.len() as f64,
        0.0,
        if missing.is_empty() {
            format!("{total}/{total} invariants exercised")
        } else {
            format!("missing: {}", missing.join(", "))
        },
    )
}

fn numerics(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "numerics";
    let mut out = Vec::new();

    let rejects_nan = DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err();
    let rejects_len = DenseMatrix::new(2, 2, vec![1.0; 3]).is_err();
    out.push(check(
        S,
        "matrix_construction",
        f64::from(u8::from(!(rejects_nan && rejects_len))),
        0.0,
        "NaN and length mismatch rejected",
    ));

    out.push(guarded(S, "sym_eig_reconstruction", 1e-9, || {
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let n = rng.random_range(1..=8);
            let m = random_symmetric(rng, n);
            let (u, d) = sym_eig(&m, 1e-14)?;
            let r = u.matmul(&DenseMatrix::from_diag(&d)).matmul(&u.transpose());
            worst = worst.max(r.sub(&m).frobenius_norm() / m.frobenius_norm().max(f64::MIN_POSITIVE));
        }
        Ok(check(S, "sym_eig_reconstruction", worst, 1e-9, "1000 matrices"))
    }));

    out.push(guarded(S, "svd_reconstruction", 1e-9, || {
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let (r, c) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let m = DenseMatrix::new(r, c, gaussian(rng, r * c))?;
            let (u, s, v) = svd(&m)?;
            let back = u.matmul(&DenseMatrix::from_diag(&s)).matmul(&v.transpose());
            let rec = back.sub(&m).frobenius_norm() / m.frobenius_norm();
            worst = worst
                .max(rec)
                .max(orthonormality_error(&u))
                .max(orthonormality_error(&v));
        }
        Ok(check(S, "svd_reconstruction", worst, 1e-9, "reconstruction and orthonormality"))
    }));

    out.push(guarded(S, "mat_exp_inverse", 1e-8, || {
        let mut worst = 0.0_f64;
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let m = DenseMatrix::new(n, n, gaussian(rng, n * n))?;
            let m = m.scale(rng.random_range(0.0..5.0) / m.frobenius_norm().max(f64::MIN_POSITIVE));
            let p = mat_exp(&m)?.matmul(&mat_exp(&m.scale(-1.0))?);
            worst = worst.max(p.sub(&DenseMatrix::identity(n)).frobenius_norm());
        }
        Ok(check(S, "mat_exp_inverse", worst, 1e-8, "300 matrices, ‖M‖_F ≤ 5"))
    }));

    out.push(guarded(S, "principal_angles_symmetric", 1e-10, || {
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let n = rng.random_range(2..=8);
            let k = rng.random_range(1..=n);
            let q0 = random_rotation(n, rng);
            let q1 = random_rotation(n, rng);
            let cols: Vec<usize> = (0..k).collect();
            let rows: Vec<usize> = (0..n).collect();
            let (b0, b1) = (q0.select(&rows, &cols), q1.select(&rows, &cols));
            let a = principal_angles(&b0, &b1)?;
            let b = principal_angles(&b1, &b0)?;
            worst = worst.max(diff_norm(&a, &b));
        }
        Ok(check(S, "principal_angles_symmetric", worst, 1e-10, "200 subspace pairs"))
    }));
    out
}

fn quadform(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "quadform";
    let mut out = Vec::new();

    out.push(guarded(S, "form_type", 1e-9, || {
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let n = rng.random_range(1..=6);
            let m = DenseMatrix::new(n, n, gaussian(rng, n * n))?;
            let f = QuadraticForm::symmetrize(&m)?;
            let a = f.matrix();
            if a.max_asymmetry() != 0.0 {
                return Ok(check(S, "form_type", f64::INFINITY, 1e-9, "stored matrix not symmetric"));
            }
            let sig = f.signature();
            if sig.p + sig.q + sig.z != n {
                return Ok(check(S, "form_type", f64::INFINITY, 1e-9, "signature does not sum to n"));
            }
            let u = f.eigenvectors();
            let r = u.matmul(&DenseMatrix::from_diag(f.eigenvalues())).matmul(&u.transpose());
            worst = worst.max(r.sub(a).frobenius_norm() / a.frobenius_norm().max(f64::MIN_POSITIVE));
        }
        Ok(check(S, "form_type", worst, 1e-9, "500 forms"))
    }));

    out.push(guarded(S, "pseudonorm_invariance", 1e-8, || {
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let g = sample_element(&f, rng, 0.5)?;
            let x = non_null(rng, &f);
            worst = worst.max((f.pseudonorm(&g.apply(&x))? - f.pseudonorm(&x)?).abs());
        }
        Ok(check(S, "pseudonorm_invariance", worst, 1e-8, "1000 (x, g), n ≤ 6"))
    }));

    out.push(guarded(S, "gram_invariance", 1e-8, || {
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let g = sample_element(&f, rng, 0.5)?;
            let xs: Vec<Vec<f64>> = (0..rng.random_range(1..=5)).map(|_| gaussian(rng, n)).collect();
            let moved: Vec<Vec<f64>> = xs.iter().map(|x| g.apply(x)).collect();
            worst = worst.max(f.gram(&moved)?.sub(&f.gram(&xs)?).max_abs());
        }
        Ok(check(S, "gram_invariance", worst, 1e-8, "500 tuples"))
    }));

    out.push(guarded(S, "normalize_unit", 1e-10, || {
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let n = rng.random_range(1..=6);
            let f = random_invertible_form(rng, n);
            let x = non_null(rng, &f);
            worst = worst.max((f.eval(&f.normalize(&x)?)?.abs() - 1.0).abs());
        }
        Ok(check(S, "normalize_unit", worst, 1e-10, "1000 vectors"))
    }));

    out.push(guarded(S, "gauge_idempotent", 1e-12, || {
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let n = rng.random_range(1..=6);
            let f = QuadraticForm::symmetrize(&random_symmetric(rng, n))?;
            let g1 = f.canonical_gauge()?;
            let g2 = g1.canonical_gauge()?;
            worst = worst.max(g2.matrix().sub(g1.matrix()).max_abs());
        }
        Ok(check(S, "gauge_idempotent", worst, 1e-12, "500 forms"))
    }));
    out
}

/// Diagonal test forms for the given (p, q, z) signatures.
fn signature_forms() -> Vec<QuadraticForm> {
    [(3, 0, 0), (2, 1, 0), (1, 1, 1), (2, 2, 0), (1, 3, 0)]
        .iter()
        .map(|&(p, q, z)| {
            let mut d = vec![1.0; p];
            d.extend(vec![-1.0; q]);
            d.extend(vec![0.0; z]);
            QuadraticForm::from_diag(&d)
        })
        .collect()
}

fn group(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "group";
    let mut out = Vec::new();

    out.push(guarded(S, "certification", 1e-8, || {
        let mut forms = vec![
            QuadraticForm::identity(3),
            QuadraticForm::minkowski(),
            QuadraticForm::from_diag(&[1.0, 1.0, -1.0, -1.0]),
        ];
        for n in 2..=6 {
            forms.push(random_invertible_form(rng, n));
        }
        let mut worst = 0.0_f64;
        for f in &forms {
            for _ in 0..1000 {
                let g = sample_element(f, rng, 0.5)?;
                worst = worst.max(g.residual() / f.frobenius_norm());
                worst = worst.max((g.matrix().determinant().abs() - 1.0).abs() * 1e-8 / 1e-8);
            }
        }
        Ok(check(S, "certification", worst, 1e-8, format!("{} forms × 1000 elements", forms.len())))
    }));

    out.push(guarded(S, "closure", 1e-7, || {
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let mut g = GroupElement::identity(&f);
            for _ in 0..rng.random_range(1..=8) {
                g = g.compose(&sample_element(&f, rng, 0.3)?)?;
                worst = worst.max(g.residual() / f.frobenius_norm());
            }
            worst = worst.max(g.inverse()?.residual() / f.frobenius_norm());
        }
        Ok(check(S, "closure", worst, 1e-7, "200 chains"))
    }));

    out.push(guarded(S, "householder_self_inverse", 1e-10, || {
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let w = non_null(rng, &f);
            let r = a_householder(&f, &w)?;
            let rr = r.matrix().matmul(r.matrix()).sub(&DenseMatrix::identity(n)).frobenius_norm();
            worst = worst.max(rr).max(r.residual() / f.frobenius_norm());
        }
        Ok(check(S, "householder_self_inverse", worst, 1e-10, "1000 reflections"))
    }));

    out.push(guarded(S, "alignment", 1e-8, || {
        let mut worst = 0.0_f64;
        for f in signature_forms() {
            for _ in 0..1000 {
                let x = non_null(rng, &f);
                let res = canonical_align(&f, &x)?;
                let mut target = vec![0.0; x.len()];
                target[res.target_axis()] = res.gamma();
                let miss = diff_norm(&res.w().apply(&x), &target) / norm(&x);
                let gamma_err = (res.gamma().abs() - f.pseudonorm(&x)?.abs()).abs() / norm(&x);
                worst = worst.max(miss).max(res.membership_residual()).max(gamma_err);
            }
        }
        Ok(check(S, "alignment", worst, 1e-8, "1000 vectors × 5 signatures"))
    }));

    out.push(guarded(S, "align_idempotent", 1e-12, || {
        let mut worst = 0.0_f64;
        for f in signature_forms() {
            let x = non_null(rng, &f);
            let res = canonical_align(&f, &x)?;
            let mut canon = vec![0.0; x.len()];
            canon[res.target_axis()] = res.gamma();
            let again = canonical_align(&f, &canon)?;
            worst = worst.max(diff_norm(&again.w().apply(&canon), &canon) / res.gamma().abs());
        }
        Ok(check(S, "align_idempotent", worst, 1e-12, "5 signatures"))
    }));

    out.push(guarded(S, "transport_round_trip", 1e-6, || {
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let x = non_null(rng, &f);
            let y = sample_element(&f, rng, 0.5)?.apply(&x);
            let txy = transport(&f, &x, &y)?;
            let tyx = transport(&f, &y, &x)?;
            let back = tyx.apply(&txy.apply(&x));
            let miss = diff_norm(&txy.apply(&x), &y) / norm(&y);
            worst = worst.max(diff_norm(&back, &x) / norm(&x)).max(miss);
        }
        Ok(check(S, "transport_round_trip", worst, 1e-6, "500 pairs"))
    }));

    out.push(guarded(S, "orbit_equivalence", 0.0, || {
        let mut misses = 0;
        for _ in 0..1000 {
            let n = rng.random_range(2..=6);
            let f = random_invertible_form(rng, n);
            let x = non_null(rng, &f);
            let g = sample_element(&f, rng, 0.5)?;
            if !orbit_equivalent(&f, &x, &g.apply(&x), 1e-6) {
                misses += 1;
            }
        }
        Ok(check(S, "orbit_equivalence", f64::from(misses), 0.0, "1000 (x, g·x) pairs"))
    }));
    out
}

/// A random scalar-output graph touching every op kind; returns the tape,
/// its output node and the input bindings.
pub fn random_graph(rng: &mut ChaCha8Rng) -> (Tape, crate::autodiff::NodeId, HashMap<String, DenseMatrix>) {
    fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        let v = (0..r * c)
            .map(|_| {
                let m = rng.random_range(0.3..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        DenseMatrix::new(r, c, v).expect("finite")
    }
    let (b, k, h) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=6));
    let mut t = Tape::new();
    let x = t.input("x");
    let w = t.param("w", mat(rng, k, h));
    let bias = t.param("b", mat(rng, 1, h));
    let c = t.constant(mat(rng, b, h));
    let z = t.matmul(x, w);
    let z = t.add(z, bias);
    let z = t.scale(z, 0.5);
    let a1 = t.tanh(z);
    let a2 = t.sigmoid(z);
    let a3 = t.relu(z);
    let m = t.mul(a1, c);
    let s = t.sub(m, a2);
    let s = t.add(s, a3);
    let sq = t.square(a1);
    let one = t.constant(DenseMatrix::filled(1, 1, 1.0));
    let den = t.add(sq, one);
    let inv = t.reciprocal_guarded(den, 1e-9, Guard::Clamp);
    let rs = t.sqrt_abs_signed(den, 1e-12);
    let cat = t.concat(&[s, inv, rs]);
    let left = t.slice(cat, 0, h + 1);
    let tr = t.transpose(left);
    let rows = t.sum(left, Axis::Rows);
    let cols = t.sum(tr, Axis::Cols);
    let all = t.sum(rows, Axis::All);
    let c2 = t.mean(cols);
    let out = t.add(all, c2);
    let out = t.scale(out, 1.0 / (b * h) as f64);
    let mut inputs = HashMap::new();
    inputs.insert("x".to_string(), mat(rng, b, k));
    (t, out, inputs)
}

fn autodiff(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "autodiff";
    let mut out = Vec::new();

    out.push(guarded(S, "graph_order", 0.0, || {
        let mut t = Tape::new();
        let x = t.param("x", DenseMatrix::filled(1, 1, 2.0));
        let y = t.square(x);
        let z = t.mul(y, x);
        let ordered = x.index() < y.index() && y.index() < z.index();
        t.forward(&HashMap::new())?;
        t.backward(z, &DenseMatrix::filled(1, 1, 1.0))?;
        // d(x³)/dx = 3x² only if y's adjoint was complete before x's
        let grad = t.grad(x)?[(0, 0)];
        let bad = f64::from(u8::from(!ordered)) + (grad - 12.0).abs();
        Ok(check(S, "graph_order", bad, 0.0, "append order and reverse sweep"))
    }));

    out.push(guarded(S, "sqrt_guard", 0.0, || {
        let mut t = Tape::new();
        let u = t.param("u", DenseMatrix::new(1, 3, vec![4.0, -9.0, 1e-14])?);
        let r = t.sqrt_abs_signed(u, 1e-12);
        let s = t.sum(r, Axis::All);
        t.forward(&HashMap::new())?;
        t.backward(s, &DenseMatrix::filled(1, 1, 1.0))?;
        let v = t.value(r)?.as_slice().to_vec();
        let g = t.grad(u)?.as_slice().to_vec();
        let err = (v[0] - 2.0).abs() + (v[1] + 3.0).abs() + v[2].abs() + (g[0] - 0.25).abs() + g[2].abs();
        Ok(check(S, "sqrt_guard", err, 0.0, "values, slopes and the guard band"))
    }));

    out.push(guarded(S, "grad_check_fuzz", 1e-4, || {
        let mut worst = 0.0_f64;
        for _ in 0..50 {
            let (mut t, o, inputs) = random_graph(rng);
            worst = worst.max(t.grad_check(o, &inputs, 1e-5)?.max_rel_error);
        }
        Ok(check(S, "grad_check_fuzz", worst, 1e-4, "50 graphs"))
    }));

    out.push(guarded(S, "backward_linear", 1e-12, || {
        let (mut t, o, inputs) = random_graph(rng);
        t.forward(&inputs)?;
        t.backward(o, &DenseMatrix::filled(1, 1, 1.0))?;
        let g1: Vec<f64> = t.param_grads()?.into_iter().flat_map(|g| g.into_vec()).collect();
        t.backward(o, &DenseMatrix::filled(1, 1, -2.5))?;
        let g2: Vec<f64> = t.param_grads()?.into_iter().flat_map(|g| g.into_vec()).collect();
        let worst = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (b + 2.5 * a).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        Ok(check(S, "backward_linear", worst, 1e-12, "seed 1 vs −2.5"))
    }));

    out.push(guarded(S, "forward_replay", 0.0, || {
        let (mut t, o, inputs) = random_graph(rng);
        t.forward(&inputs)?;
        let a = t.value(o)?.clone();
        t.forward(&inputs)?;
        let same = t.value(o)?.as_slice()[0].to_bits() == a.as_slice()[0].to_bits();
        Ok(check(S, "forward_replay", f64::from(u8::from(!same)), 0.0, "bitwise"))
    }));
    out
}

fn small_net(rng: &mut ChaCha8Rng, action: Action, source: FormSource, n: usize) -> Result<GOrthoNet> {
    let mut cfg = NetConfig::new(n, action);
    cfg.hidden = vec![8, 8];
    GOrthoNet::new(cfg, source, rng)
}

/// Sets every parameter to a random normal value.
fn scramble(net: &mut GOrthoNet, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
    let p: Vec<f64> = (0..net.param_count())
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    net.set_params_flat(&p)
}

fn model(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "model";
    let mut out = Vec::new();

    out.push(guarded(S, "mlp_shapes", 0.0, || {
        let f = QuadraticForm::minkowski();
        let inv = small_net(rng, Action::Invariant, FormSource::Frozen(f.clone()), 4)?;
        let conj = small_net(rng, Action::Conjugation, FormSource::Frozen(f), 4)?;
        let mut bad = 0.0;
        if inv.phi_s().is_some() {
            bad += 1.0;
        }
        for mlp in [Some(inv.phi_n()), conj.phi_s(), Some(conj.phi_n())].into_iter().flatten() {
            bad += f64::from(u8::from(mlp.widths().windows(2).any(|w| w[0] == 0 || w[1] == 0)));
        }
        Ok(check(S, "mlp_shapes", bad, 0.0, "layer widths and φ_s presence"))
    }));

    out.push(guarded(S, "realize_orthogonality", 1e-10, || {
        let mut worst = 0.0_f64;
        for k in 0..1000 {
            let n = rng.random_range(1..=6);
            let init = if k % 2 == 0 { FormInit::Random } else { FormInit::Identity };
            let (u, a) = LearnableForm::with_init(n, init, rng).realize();
            worst = worst
                .max(u.transpose().matmul(&u).sub(&DenseMatrix::identity(n)).frobenius_norm())
                .max(a.max_asymmetry());
        }
        Ok(check(S, "realize_orthogonality", worst, 1e-10, "1000 draws, random and identity starts"))
    }));

    out.push(guarded(S, "reflection_membership", 1e-9, || {
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let form = random_invertible_form(rng, 4);
            let mut net = small_net(rng, Action::Conjugation, FormSource::Frozen(form.clone()), 4)?;
            scramble(&mut net, rng, 0.5)?;
            let xs: Vec<Vec<f64>> = (0..8).map(|_| form.normalize(&non_null(rng, &form)).expect("non-null")).collect();
            net.forward_batch(&Batch::single(DenseMatrix::from_rows(&xs)?))?;
            let ws = net.last_directions()?;
            for i in 0..xs.len() {
                let w = ws[0].row_slice(i);
                let Ok(r) = a_householder(&form, w) else { continue };
                let rr = r.matrix().matmul(r.matrix()).sub(&DenseMatrix::identity(4)).frobenius_norm();
                worst = worst.max(r.residual() / form.frobenius_norm()).max(rr);
            }
        }
        Ok(check(S, "reflection_membership", worst, 1e-9, "800 emitted reflections, random weights"))
    }));

    out.push(guarded(S, "exact_invariance", 1e-8, || {
        let form = QuadraticForm::minkowski();
        let mut net = small_net(rng, Action::Invariant, FormSource::Frozen(form.clone()), 4)?;
        scramble(&mut net, rng, 0.5)?;
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let x = non_null(rng, &form);
            let g = sample_element(&form, rng, 0.5)?;
            let a = net.forward(&x, None)?[0];
            let b = net.forward(&g.apply(&x), None)?[0];
            worst = worst.max((a - b).abs());
        }
        Ok(check(S, "exact_invariance", worst, 1e-8, "1000 (x, g)"))
    }));

    out.push(guarded(S, "tuple_gram_invariance", 1e-8, || {
        let form = random_invertible_form(rng, 4);
        let mut cfg = NetConfig::new(4, Action::Conjugation);
        cfg.hidden = vec![8];
        cfg.mode = InputMode::Tuple { points: 3, masses: true };
        let mut net = GOrthoNet::new(cfg, FormSource::Frozen(form.clone()), rng)?;
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let xs: Vec<f64> = (0..3).flat_map(|_| non_null(rng, &form)).collect();
            let g = sample_element(&form, rng, 0.5)?;
            let moved: Vec<f64> = xs.chunks(4).flat_map(|x| g.apply(x)).collect();
            let m = DenseMatrix::new(1, 3, vec![0.5, 1.0, 1.5])?;
            net.forward_batch(&Batch {
                x: DenseMatrix::new(1, 12, xs)?,
                masses: Some(m.clone()),
            })?;
            let f0 = net.last_features()?;
            net.forward_batch(&Batch {
                x: DenseMatrix::new(1, 12, moved)?,
                masses: Some(m),
            })?;
            worst = worst.max(net.last_features()?.sub(&f0).max_abs());
        }
        Ok(check(S, "tuple_gram_invariance", worst, 1e-8, "200 tuples"))
    }));

    out.push(guarded(S, "gradient_flow", 1e-4, || {
        let mut worst = 0.0_f64;
        for action in [Action::Invariant, Action::Left, Action::Conjugation] {
            let form = LearnableForm::init(4, rng);
            let mut net = small_net(rng, action, FormSource::Learnable(form), 4)?;
            // inputs kept well away from the null cone of the near-identity start
            let mut x = DenseMatrix::new(3, 4, gaussian(rng, 12))?;
            for v in x.as_mut_slice() {
                *v += v.signum() * 0.5;
            }
            worst = worst.max(full_model_grad_check(&mut net, &x, rng)?);
        }
        Ok(check(S, "gradient_flow", worst, 1e-4, "invariant, left and conjugation with learnable forms"))
    }));

    out.push(guarded(S, "representability", 1e-3, || {
        let cfg = ExperimentConfig::from_toml(super::REPRESENTABILITY_TOML)?;
        let dir = scratch_dir("representability")?;
        let cfg = ExperimentConfig { output_dir: dir.clone(), ..cfg };
        let report = run_single(&cfg);
        let _ = std::fs::remove_dir_all(&dir);
        let report = report?;
        let mse = report.final_train_loss.unwrap_or(f64::INFINITY);
        Ok(check(
            S,
            "representability",
            mse,
            1e-3,
            format!("Task 1, frozen form, {} epochs", cfg.train.epochs),
        ))
    }));
    out
}

/// Max relative grad_check error of a scalar loss built on top of the
/// model's output.
pub fn full_model_grad_check(net: &mut GOrthoNet, x: &DenseMatrix, rng: &mut ChaCha8Rng) -> Result<f64> {
    let width = net.config().output_width();
    let weights = DenseMatrix::new(x.rows(), width, gaussian(rng, x.rows() * width))?.scale(1e-3);
    let output = net.output_node();
    let tape = net.tape_mut();
    let c = tape.constant(weights);
    let prod = tape.mul(output, c);
    let loss = tape.sum(prod, Axis::All);
    let mut inputs = HashMap::new();
    inputs.insert("x".to_string(), x.clone());
    let report = tape.grad_check(loss, &inputs, 1e-5)?;
    Ok(report.max_rel_error)
}

fn scratch_dir(tag: &str) -> Result<std::path::PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("gortho-verify-{tag}-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn tiny_synthetic(rng: &mut ChaCha8Rng) -> Result<Dataset> {
    gen_synthetic_o22(256, rng)?.normalized()
}

fn training(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "training";
    let mut out = Vec::new();

    let bad_lr = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let bad_eps = TrainConfig {
        adam_eps: -1.0,
        ..TrainConfig::default()
    };
    let rejected = bad_lr.validate().is_err() && bad_eps.validate().is_err();
    out.push(check(S, "config_rates", f64::from(u8::from(!rejected)), 0.0, "non-positive rates rejected"));

    let data = tiny_synthetic(rng);
    let run = |seed: u64, epochs: usize, data: &Dataset| -> Result<(Vec<u8>, crate::training::TrainHistory)> {
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = NetConfig::new(4, Action::Conjugation);
        cfg.hidden = vec![16];
        let mut net = GOrthoNet::new(cfg, FormSource::Learnable(LearnableForm::init(4, &mut init)), &mut init)?;
        let tc = TrainConfig {
            epochs,
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        };
        let h = train(&mut net, data, &tc, Some(&data.true_form))?;
        let mut blob = Vec::new();
        net.write_params(&mut blob)?;
        Ok((blob, h))
    };

    out.push(guarded(S, "history_lengths", 0.0, || {
        let data = data.clone()?;
        let (_, h) = run(3, 4, &data)?;
        let bad = [h.train_loss.len(), h.val_loss.len(), h.cos.len()]
            .iter()
            .filter(|&&l| l != 4)
            .count();
        Ok(check(S, "history_lengths", bad as f64, 0.0, "4 epochs"))
    }));

    out.push(guarded(S, "seed_determinism", 0.0, || {
        let data = data.clone()?;
        let (a, _) = run(11, 3, &data)?;
        let (b, _) = run(11, 3, &data)?;
        Ok(check(S, "seed_determinism", f64::from(u8::from(a != b)), 0.0, "two runs, same seed"))
    }));

    out.push(guarded(S, "loss_not_increased", 0.0, || {
        let mut data_rng = ChaCha8Rng::seed_from_u64(5);
        let data = gen_lorentz_cls(512, &mut data_rng)?;
        let mut init = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = NetConfig::new(4, Action::Invariant);
        cfg.hidden = vec![16, 16];
        let mut net = GOrthoNet::new(cfg, FormSource::Learnable(LearnableForm::init(4, &mut init)), &mut init)?;
        let tc = TrainConfig {
            epochs: 20,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &data, &tc, None)?;
        let last = *h.train_loss.last().unwrap_or(&f64::INFINITY);
        Ok(check(
            S,
            "loss_not_increased",
            (last - h.initial_train_loss).max(0.0),
            0.0,
            format!("initial {:.4} final {:.4}", h.initial_train_loss, last),
        ))
    }));

    out.push(guarded(S, "noise_inputs_untouched", 0.0, || {
        let data = data.clone()?;
        let noisy = inject_label_noise(&data, 1.0, rng)?;
        let same = noisy
            .inputs
            .as_slice()
            .iter()
            .zip(data.inputs.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        Ok(check(S, "noise_inputs_untouched", f64::from(u8::from(!same)), 0.0, "bitwise"))
    }));

    out.push(guarded(S, "noise_statistics", 0.05, || {
        let data = data.clone()?;
        let mut worst = 0.0_f64;
        for sigma in [0.5, 1.0] {
            let noisy = inject_label_noise(&data, sigma, rng)?;
            let d: Vec<f64> = noisy
                .targets
                .as_slice()
                .iter()
                .zip(data.targets.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            worst = worst.max((sd / sigma - 1.0).abs());
        }
        Ok(check(S, "noise_statistics", worst, 0.05, "relative std error, 4096 entries per level"))
    }));

    out.push(guarded(S, "median_sample_loss", 1e-12, || {
        let data = data.clone()?;
        let mut init = ChaCha8Rng::seed_from_u64(8);
        let mut cfg = NetConfig::new(4, Action::Conjugation);
        cfg.hidden = vec![8];
        let mut net = GOrthoNet::new(cfg, FormSource::Learnable(LearnableForm::random(4, &mut init)), &mut init)?;
        let mut single = Vec::new();
        for i in 0..3 {
            single.push(evaluate(&mut net, &data.subset(&[i]), 1)?);
        }
        let med = median_sample_loss(&mut net, &data.subset(&[0, 1, 2]))?;
        single.sort_by(f64::total_cmp);
        let err = (med - single[1]).abs() / single[1].abs().max(1e-300);
        Ok(check(S, "median_sample_loss", err, 1e-12, "three samples, relative"))
    }));

    out.push(guarded(S, "keep_best_restores", 1e-12, || {
        let data = data.clone()?;
        let mut init = ChaCha8Rng::seed_from_u64(9);
        let mut cfg = NetConfig::new(4, Action::Conjugation);
        cfg.hidden = vec![16];
        let mut net = GOrthoNet::new(cfg, FormSource::Learnable(LearnableForm::random(4, &mut init)), &mut init)?;
        let tc = TrainConfig {
            epochs: 6,
            batch_size: 32,
            seed: 4,
            keep_best: true,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &data, &tc, None)?;
        let (_, val) = split(&data, tc.val_fraction, &mut ChaCha8Rng::seed_from_u64(tc.seed));
        let best = h.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let now = evaluate(&mut net, &val, 1024)?;
        let err = if h.best_epoch.is_some_and(|e| h.val_loss[e] == best) {
            (now - best).abs() / best.max(1e-300)
        } else {
            f64::INFINITY
        };
        Ok(check(S, "keep_best_restores", err, 1e-12, format!("best epoch {:?}", h.best_epoch)))
    }));

    let n = 50;
    let factors: Vec<f64> = (0..=n).map(|e| LrSchedule::Cosine.factor(e, n)).collect();
    let monotone = factors.windows(2).all(|w| w[1] <= w[0]);
    let ends = (factors[0] - 1.0).abs() + factors[n].abs() + (LrSchedule::Constant.factor(7, n) - 1.0).abs();
    out.push(check(
        S,
        "lr_schedule",
        if monotone { ends } else { f64::INFINITY },
        1e-15,
        "cosine 1 → 0 non-increasing, constant 1",
    ));
    out
}

fn tasks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "tasks";
    let mut out = Vec::new();
    let synth = gen_synthetic_o22(500, rng);
    let inertia = gen_inertia(5, 500, rng);
    let lorentz = gen_lorentz_cls(500, rng);

    out.push(guarded(S, "non_null_inputs", 0.0, || {
        let mut bad = 0;
        for ds in [synth.clone()?, lorentz.clone()?] {
            for i in 0..ds.len() {
                if ds.true_form.eval(ds.point(i, 0))?.abs() < NULL_MARGIN {
                    bad += 1;
                }
            }
        }
        Ok(check(S, "non_null_inputs", f64::from(bad), 0.0, "synthetic and Lorentz inputs"))
    }));

    out.push(guarded(S, "formula_recomputation", 1e-12, || {
        let mut worst = 0.0_f64;
        let ds = synth.clone()?;
        let a = ds.true_form.matrix().clone();
        for i in 0..ds.len() {
            let x = DenseMatrix::column(ds.point(i, 0));
            let xxa = x.matmul(&x.transpose()).matmul(&a);
            let want = xxa.matmul(&xxa).scale(9.0).add(&xxa.scale(2.0));
            let got = ds.targets.row_slice(i);
            worst = worst.max(diff_norm(got, want.as_slice()) / want.frobenius_norm().max(1.0));
        }
        let ds = inertia.clone()?;
        let m = ds.masses.clone().expect("inertia has masses");
        for i in 0..ds.len() {
            let mut want = [0.0; 9];
            for p in 0..ds.points {
                let x = ds.point(i, p);
                let mass = m[(i, p)];
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                for r in 0..3 {
                    for c in 0..3 {
                        want[r * 3 + c] += mass * (if r == c { r2 } else { 0.0 } - x[r] * x[c]);
                    }
                }
            }
            worst = worst.max(diff_norm(ds.targets.row_slice(i), &want) / norm(&want).max(1.0));
        }
        let ds = lorentz.clone()?;
        let mut flips = 0;
        for i in 0..ds.len() {
            let x = ds.point(i, 0);
            let q = x[0].powi(2) - x[1].powi(2) - x[2].powi(2) - x[3].powi(2);
            let want = if q > LORENTZ_THRESHOLD { 1.0 } else { 0.0 };
            if ds.targets[(i, 0)] != want {
                flips += 1;
            }
        }
        Ok(check(
            S,
            "formula_recomputation",
            worst + f64::from(flips),
            1e-12,
            "all three tasks",
        ))
    }));

    out.push(guarded(S, "data_equivariance", 1e-8, || {
        let mut worst = 0.0_f64;
        let ds = synth.clone()?;
        let a = ds.true_form.matrix().clone();
        for i in 0..200 {
            let g = sample_element(&ds.true_form, rng, 0.3)?;
            let g_inv = g.inverse()?;
            let x = ds.point(i, 0);
            let gx = g.apply(x);
            let gy = act_on_target(Action::Conjugation, g.matrix(), g_inv.matrix(), ds.targets.row_slice(i));
            let want = crate::tasks::synthetic_target(&a, &gx);
            worst = worst.max(diff_norm(&gy, want.as_slice()) / norm(&gy).max(1.0));
        }
        let ds = inertia.clone()?;
        let m = ds.masses.clone().expect("inertia has masses");
        for i in 0..200 {
            let g = random_rotation(3, rng);
            let pts: Vec<Vec<f64>> = (0..ds.points).map(|p| g.matvec(ds.point(i, p))).collect();
            let want = crate::tasks::inertia_target(&pts, m.row_slice(i));
            let gy = act_on_target(Action::Conjugation, &g, &g.transpose(), ds.targets.row_slice(i));
            worst = worst.max(diff_norm(&gy, want.as_slice()) / norm(&gy).max(1.0));
        }
        let ds = lorentz.clone()?;
        for i in 0..200 {
            let g = sample_element(&ds.true_form, rng, 0.3)?;
            let x = ds.point(i, 0);
            let q = ds.true_form.eval(x)?;
            worst = worst.max((ds.true_form.eval(&g.apply(x))? - q).abs() / q.abs().max(1.0));
        }
        Ok(check(S, "data_equivariance", worst, 1e-8, "200 pairs per task"))
    }));
    out
}

fn metrics(rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "metrics";
    let mut out = Vec::new();

    out.push(guarded(S, "generator_residuals", 1e-6, || {
        let mut worst = 0.0_f64;
        for n in 2..=6 {
            let f = random_invertible_form(rng, n);
            let b = lie_basis(&f)?;
            for x in b.generators() {
                let r = x.transpose().matmul(f.matrix()).add(&f.matrix().matmul(x));
                worst = worst.max(r.frobenius_norm() / f.frobenius_norm());
            }
            worst = worst.max(orthonormality_error(&b.as_columns()) * 1e-6 / 1e-8);
        }
        Ok(check(S, "generator_residuals", worst, 1e-6, "n = 2..6 (orthonormality scaled to 1e-8)"))
    }));

    out.push(guarded(S, "lie_dimension", 0.0, || {
        let mut bad = 0;
        for n in 2..=6 {
            for _ in 0..3 {
                if lie_basis(&random_invertible_form(rng, n))?.dim() != n * (n - 1) / 2 {
                    bad += 1;
                }
            }
        }
        Ok(check(S, "lie_dimension", f64::from(bad), 0.0, "n = 2..6, 3 forms each"))
    }));

    out.push(guarded(S, "recover_identity", 1e-3, || {
        let mut worst = 0.0_f64;
        for n in 2..=5 {
            for _ in 0..5 {
                let f = random_invertible_form(rng, n);
                let rec = recover_form(lie_basis(&f)?.generators())?;
                worst = worst.max(1.0 - gauged_cos(&f, &rec.form)?.abs());
            }
        }
        Ok(check(S, "recover_identity", worst, 1e-3, "1 − |cos|, n = 2..5"))
    }));

    out.push(guarded(S, "projection_metric", 1e-8, || {
        let mut worst = 0.0_f64;
        for n in 2..=5 {
            let f0 = random_invertible_form(rng, n);
            let f1 = random_invertible_form(rng, n);
            let (b0, b1) = (lie_basis(&f0)?, lie_basis(&f1)?);
            let asym = (projection_distance(&b0, &b1)? - projection_distance(&b1, &b0)?).abs();
            let selfd = projection_distance(&b0, &b0)?;
            // the same algebra from a rescaled form is the same span
            let b2 = lie_basis(&f0.scaled(-3.0))?;
            worst = worst.max(asym).max(selfd).max(projection_distance(&b0, &b2)?);
        }
        // so(2) and so(1,1) are spanned by orthogonal generators
        let p = lie_basis(&QuadraticForm::identity(2))?;
        let q = lie_basis(&QuadraticForm::from_diag(&[1.0, -1.0]))?;
        worst = worst.max((projection_distance(&p, &q)? - 1.0).abs());
        Ok(check(S, "projection_metric", worst, 1e-8, "symmetry, identity and the orthogonal case"))
    }));
    out
}

fn cli() -> Vec<Check> {
    const S: &str = "cli";
    let mut out = Vec::new();
    out.push(guarded(S, "config_round_trip", 0.0, || {
        let cfg = ExperimentConfig::from_toml(super::SMOKE_TOML)?;
        let back = ExperimentConfig::from_toml(&cfg.to_toml())?;
        Ok(check(S, "config_round_trip", f64::from(u8::from(cfg != back)), 0.0, "smoke config"))
    }));
    out.push(guarded(S, "restart_validation", 0.0, || {
        let base = ExperimentConfig::from_toml(super::SMOKE_TOML)?;
        let bad = [(0, 0), (2, 0), (2, base.train.epochs + 1)];
        let accepted = bad
            .iter()
            .filter(|&&(form_restarts, restart_epochs)| {
                ExperimentConfig { form_restarts, restart_epochs, ..base.clone() }.validate().is_ok()
            })
            .count();
        let good = ExperimentConfig { form_restarts: 2, restart_epochs: base.train.epochs, ..base }.validate().is_ok();
        Ok(check(S, "restart_validation", (accepted + usize::from(!good)) as f64, 0.0, "restart counts and warm-up lengths"))
    }));
    out.push(guarded(S, "report_reproducible", 0.0, || {
        let base = ExperimentConfig::from_toml(super::SMOKE_TOML)?;
        let d1 = scratch_dir("repro-a")?;
        let d2 = scratch_dir("repro-b")?;
        let r1 = run_single(&ExperimentConfig {
            output_dir: d1.clone(),
            ..base.clone()
        });
        // the second run starts from the config embedded in the first report
        let r2 = r1.clone().and_then(|r| {
            run_single(&ExperimentConfig {
                output_dir: d2.clone(),
                ..r.config
            })
        });
        let blobs_equal = std::fs::read(d1.join("params.gon1")).ok() == std::fs::read(d2.join("params.gon1")).ok();
        let _ = std::fs::remove_dir_all(&d1);
        let _ = std::fs::remove_dir_all(&d2);
        let (r1, r2) = (r1?, r2?);
        let same = r1.metrics == r2.metrics && r1.history == r2.history && blobs_equal;
        Ok(check(S, "report_reproducible", f64::from(u8::from(!same)), 0.0, "metrics, history and blob"))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checklist_ids_are_unique_and_suites_known() {
        let ids: BTreeSet<_> = CHECKLIST.iter().map(|(s, id, _)| (*s, *id)).collect();
        assert_eq!(ids.len(), CHECKLIST.len());
        assert!(CHECKLIST.iter().all(|(s, _, _)| SUITES.contains(s)));
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("bogus").is_err());
    }

    #[test]
    fn coverage_reports_missing_checks() {
        let c = coverage(&[]);
        assert!(!c.passed);
        assert!(c.detail.contains("numerics/sym_eig_reconstruction"));
    }
}
