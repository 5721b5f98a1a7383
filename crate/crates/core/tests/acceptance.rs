//! The fourteen acceptance criteria, run sequentially. Each prints one
//! PASS/FAIL line straight to stderr (so the lines show up even when the
//! harness captures output); the test fails if any criterion does.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use gortho::autodiff::Axis;
use gortho::cli::{run_experiment, run_single, ExperimentConfig, ExperimentReport};
use gortho::group::{a_householder, canonical_align, sample_element, transport};
use gortho::metrics::{gauged_cos, lie_basis, projection_distance, recover_form};
use gortho::model::{Action, Batch, FormSource, GOrthoNet, InputMode, LearnableForm, NetConfig, PhiSInput};
use gortho::tasks::random_rotation;
use gortho::{DenseMatrix, QuadraticForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_form(rng: &mut ChaCha8Rng, n: usize) -> QuadraticForm {
    let q = random_rotation(n, rng);
    let d: Vec<f64> = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let a = q.transpose().matmul(&DenseMatrix::from_diag(&d)).matmul(&q);
    QuadraticForm::symmetrize(&a).unwrap()
}

fn non_null(rng: &mut ChaCha8Rng, form: &QuadraticForm) -> Vec<f64> {
    loop {
        let x = gaussian(rng, form.dim());
        if form.eval(&x).unwrap().abs() >= 0.1 {
            return x;
        }
    }
}

/// ‖gᵀAg − A‖_F recomputed here rather than trusted from the element.
fn membership(form: &QuadraticForm, g: &DenseMatrix) -> f64 {
    g.transpose().matmul(form.matrix()).matmul(g).sub(form.matrix()).frobenius_norm()
}

fn c1_certification(rng: &mut ChaCha8Rng) -> Outcome {
    let mut forms = vec![
        QuadraticForm::identity(3),
        QuadraticForm::minkowski(),
        QuadraticForm::from_diag(&[1.0, 1.0, -1.0, -1.0]),
    ];
    for n in 2..=6 {
        forms.push(random_form(rng, n));
    }
    let mut worst = 0.0_f64;
    for f in &forms {
        for _ in 0..1000 {
            let g = sample_element(f, rng, 0.5).unwrap();
            worst = worst.max(membership(f, g.matrix()) / f.frobenius_norm());
        }
    }
    outcome(worst <= 1e-8, format!("worst relative residual {worst:.2e} over {} forms", forms.len()))
}

fn c2_householder(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let f = random_form(rng, n);
        let w = non_null(rng, &f);
        let r = a_householder(&f, &w).unwrap();
        let r = r.matrix();
        let rr = r.matmul(r).sub(&DenseMatrix::identity(n)).frobenius_norm();
        worst = worst.max(rr).max(membership(&f, r));
    }
    outcome(worst <= 1e-10, format!("worst residual {worst:.2e}"))
}

fn c3_alignment(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0_f64;
    for (p, q, z) in [(3, 0, 0), (2, 1, 0), (1, 1, 1), (2, 2, 0), (1, 3, 0)] {
        let mut d = vec![1.0; p];
        d.extend(vec![-1.0; q]);
        d.extend(vec![0.0; z]);
        let f = QuadraticForm::from_diag(&d);
        for _ in 0..1000 {
            let x = non_null(rng, &f);
            let res = canonical_align(&f, &x).unwrap();
            let mut target = vec![0.0; x.len()];
            target[res.target_axis()] = res.gamma();
            let miss = dist(&res.w().matrix().matvec(&x), &target) / norm(&x);
            worst = worst.max(miss).max(membership(&f, res.w().matrix()));
        }
    }
    outcome(worst <= 1e-8, format!("worst residual {worst:.2e} over 5 signatures"))
}

fn c4_transport(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0_f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let f = random_form(rng, n);
        let x = non_null(rng, &f);
        let y = sample_element(&f, rng, 0.5).unwrap().apply(&x);
        let t = transport(&f, &x, &y).unwrap();
        worst = worst.max(dist(&t.matrix().matvec(&x), &y) / norm(&y));
    }
    outcome(worst <= 1e-6, format!("worst relative miss {worst:.2e} over 500 pairs"))
}

fn c5_invariance(rng: &mut ChaCha8Rng) -> Outcome {
    let form = QuadraticForm::minkowski();
    let mut cfg = NetConfig::new(4, Action::Invariant);
    cfg.hidden = vec![32, 32];
    let mut net = GOrthoNet::new(cfg, FormSource::Frozen(form.clone()), rng).unwrap();
    // random weights so the check is not against a near-constant function
    let p = gaussian(rng, net.param_count());
    net.set_params_flat(&p).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let x = non_null(rng, &form);
        let g = sample_element(&form, rng, 0.5).unwrap();
        let a = net.forward(&x, None).unwrap()[0];
        let b = net.forward(&g.apply(&x), None).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    outcome(worst <= 1e-8, format!("max |f(gx) − f(x)| = {worst:.2e}"))
}

fn c6_gram(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0_f64;
    for form in [QuadraticForm::identity(3), QuadraticForm::minkowski(), random_form(rng, 4)] {
        let n = form.dim();
        let mut cfg = NetConfig::new(n, Action::Conjugation);
        cfg.hidden = vec![8];
        cfg.mode = InputMode::Tuple { points: 3, masses: true };
        let mut net = GOrthoNet::new(cfg, FormSource::Frozen(form.clone()), rng).unwrap();
        for _ in 0..200 {
            let xs: Vec<f64> = (0..3).flat_map(|_| non_null(rng, &form)).collect();
            let g = sample_element(&form, rng, 0.5).unwrap();
            let moved: Vec<f64> = xs.chunks(n).flat_map(|x| g.apply(x)).collect();
            let masses = Some(DenseMatrix::new(1, 3, vec![0.4, 1.1, 1.7]).unwrap());
            net.forward_batch(&Batch {
                x: DenseMatrix::new(1, 3 * n, xs).unwrap(),
                masses: masses.clone(),
            })
            .unwrap();
            let before = net.last_features().unwrap();
            net.forward_batch(&Batch {
                x: DenseMatrix::new(1, 3 * n, moved).unwrap(),
                masses,
            })
            .unwrap();
            worst = worst.max(net.last_features().unwrap().sub(&before).max_abs());
        }
    }
    outcome(worst <= 1e-8, format!("max feature change {worst:.2e}"))
}

fn c7_gradients(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=4);
        let action = [Action::Invariant, Action::Left, Action::Conjugation][rng.random_range(0..3)];
        let mut cfg = NetConfig::new(n, action);
        cfg.hidden = vec![rng.random_range(3..=6)];
        cfg.out_dim = rng.random_range(1..=2);
        cfg.reflections = rng.random_range(1..=3);
        cfg.symmetric = action == Action::Conjugation && rng.random_bool(0.5);
        if rng.random_bool(0.4) {
            cfg.mode = InputMode::Tuple {
                points: rng.random_range(2..=3),
                masses: rng.random_bool(0.5),
            };
            if rng.random_bool(0.5) {
                cfg.phi_s_input = PhiSInput::All;
            }
        }
        let points = cfg.mode.points();
        let width = cfg.output_width();
        let mut net = GOrthoNet::new(cfg.clone(), FormSource::Learnable(LearnableForm::init(n, rng)), rng).unwrap();
        let batch = 3;
        let weights = DenseMatrix::new(batch, width, gaussian(rng, batch * width)).unwrap().scale(1e-3);
        let out = net.output_node();
        let tape = net.tape_mut();
        let c = tape.constant(weights);
        let prod = tape.mul(out, c);
        let loss = tape.sum(prod, Axis::All);
        // inputs away from the null cone of the near-identity starting form
        let mut x = DenseMatrix::new(batch, n * points, gaussian(rng, batch * n * points)).unwrap();
        for v in x.as_mut_slice() {
            *v += v.signum() * 0.5;
        }
        let mut inputs = HashMap::from([("x".to_string(), x)]);
        if cfg.mode.has_masses() {
            let m = (0..batch * points).map(|_| rng.random_range(0.1..2.0)).collect();
            inputs.insert("m".to_string(), DenseMatrix::new(batch, points, m).unwrap());
        }
        let report = net.tape_mut().grad_check(loss, &inputs, 1e-5).unwrap();
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 50 models ({checked} coordinates)"),
    )
}

fn c8_lie(rng: &mut ChaCha8Rng) -> Outcome {
    let mut bad_dims = 0;
    let mut worst_cos = 1.0_f64;
    for n in 2..=6 {
        let f = random_form(rng, n);
        let basis = lie_basis(&f).unwrap();
        if basis.dim() != n * (n - 1) / 2 {
            bad_dims += 1;
        }
        if n <= 5 {
            let rec = recover_form(basis.generators()).unwrap();
            worst_cos = worst_cos.min(gauged_cos(&f, &rec.form).unwrap().abs());
        }
    }
    outcome(
        bad_dims == 0 && worst_cos >= 0.999,
        format!("{bad_dims} dimension mismatches, min |cos| {worst_cos:.6}"),
    )
}

fn c9_projection(rng: &mut ChaCha8Rng) -> Outcome {
    let mut self_dist = 0.0_f64;
    for n in 2..=6 {
        let b = lie_basis(&random_form(rng, n)).unwrap();
        self_dist = self_dist.max(projection_distance(&b, &b).unwrap());
    }
    // so(2) is spanned by the antisymmetric unit, so(1,1) by the symmetric
    // off-diagonal one: orthogonal 1-dimensional spans
    let so2 = lie_basis(&QuadraticForm::identity(2)).unwrap();
    let so11 = lie_basis(&QuadraticForm::from_diag(&[1.0, -1.0])).unwrap();
    let ortho = projection_distance(&so2, &so11).unwrap();
    // so(3) and the span of three symmetric traceless matrices of ℝ³
    let e = |i: usize, j: usize| {
        let mut m = DenseMatrix::zeros(3, 3);
        m[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
        m[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
        m.as_slice().to_vec()
    };
    let sym = DenseMatrix::from_columns(&[e(0, 1), e(0, 2), e(1, 2)], 9);
    let angles = gortho::numerics::principal_angles(&lie_basis(&QuadraticForm::identity(3)).unwrap().as_columns(), &sym).unwrap();
    let ortho3 = angles.iter().map(|t| t.sin().powi(2)).sum::<f64>().sqrt();
    let err = self_dist.max((ortho - 1.0).abs()).max((ortho3 - 3f64.sqrt()).abs());
    outcome(
        err <= 1e-8,
        format!("d(g,g) ≤ {self_dist:.1e}; orthogonal k=1: {ortho:.12}, k=3: {ortho3:.12}"),
    )
}

fn preset(name: &str, out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.output_dir = out.join(name.trim_end_matches(".toml"));
    cfg
}

fn loss_line(r: &ExperimentReport) -> (bool, String) {
    let (init, fin) = (r.initial_train_loss.unwrap_or(f64::NAN), r.final_train_loss.unwrap_or(f64::NAN));
    (fin <= init, format!("train loss {init:.3e} → {fin:.3e}"))
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn c10_synthetic(out: &Path) -> Outcome {
    let cfg = preset("task1_learnable.toml", out);
    let start = Instant::now();
    let r = match run_single(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let mse = r.test_error.unwrap_or(f64::INFINITY);
    let (dec, loss) = loss_line(&r);
    let passed = cfg.n_samples == 8000
        && cfg.train.epochs <= 3000
        && mse <= 1e-2
        && r.abs_cos.is_some_and(|c| c >= 0.95)
        && r.d_pa.is_some_and(|d| d <= 0.5)
        && secs <= 600.0
        && dec;
    outcome(
        passed,
        format!(
            "test MSE {mse:.3e}, |cos| {}, d_PA {}, {secs:.0}s, {loss}",
            fmt(r.abs_cos),
            fmt(r.d_pa)
        ),
    )
}

fn c11_inertia(out: &Path) -> Outcome {
    let cfg = preset("inertia.toml", out);
    let start = Instant::now();
    let r = match run_single(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let mse = r.test_error.unwrap_or(f64::INFINITY);
    let (dec, loss) = loss_line(&r);
    let passed = cfg.n_points == 5
        && cfg.n_samples == 8000
        && mse <= 1e-2
        && r.abs_cos.is_some_and(|c| c >= 0.95)
        && secs <= 600.0
        && dec;
    outcome(
        passed,
        format!("test MSE {mse:.3e}, |cos| {}, {secs:.0}s, {loss}", fmt(r.abs_cos)),
    )
}

fn c12_lorentz(out: &Path) -> Outcome {
    let cfg = preset("lorentz.toml", out);
    let r = match run_single(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let acc = r.test_accuracy.unwrap_or(0.0);
    let (dec, loss) = loss_line(&r);
    let passed = acc >= 0.9 && r.abs_cos.is_some_and(|c| c >= 0.95) && r.d_pa.is_some_and(|d| d <= 0.5) && dec;
    outcome(
        passed,
        format!("accuracy {acc:.4}, |cos| {}, d_PA {}, {loss}", fmt(r.abs_cos), fmt(r.d_pa)),
    )
}

fn c13_noise(out: &Path) -> Outcome {
    let cfg = preset("noise_sweep.toml", out);
    let reports = match run_experiment(&cfg, 1, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let cos: Vec<f64> = reports.iter().map(|r| r.abs_cos.unwrap_or(0.0)).collect();
    let sigmas: Vec<f64> = reports.iter().map(|r| r.config.train.noise_sigma).collect();
    let all_dec = reports.iter().all(|r| loss_line(r).0);
    let levels_ok = sigmas == [0.0, 0.5, 1.0];
    let high = cos.iter().zip(&sigmas).filter(|(_, s)| **s > 0.0).all(|(c, _)| *c >= 0.9);
    let monotone = cos.windows(2).all(|w| w[1] <= w[0]);
    let detail = sigmas
        .iter()
        .zip(&cos)
        .map(|(s, c)| format!("σ={s}: |cos| {c:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("{detail}; non-increasing: {monotone}");
    outcome(levels_ok && high && monotone && all_dec, detail)
}

fn c14_representability(out: &Path) -> Outcome {
    let cfg = preset("representability.toml", out);
    let r = match run_single(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let mse = r.final_train_loss.unwrap_or(f64::INFINITY);
    let (dec, loss) = loss_line(&r);
    outcome(
        mse <= 1e-3 && dec && cfg.form_mode == gortho::training::FormMode::Frozen,
        format!("train MSE {mse:.3e} with the true form frozen, {loss}"),
    )
}

type Criterion = Box<dyn FnOnce(&mut ChaCha8Rng, &Path) -> Outcome>;

#[test]
fn acceptance() {
    let out = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let criteria: Vec<(&str, Criterion)> = vec![
        ("group certification", Box::new(|r, _| c1_certification(r))),
        ("Householder law", Box::new(|r, _| c2_householder(r))),
        ("alignment pipeline", Box::new(|r, _| c3_alignment(r))),
        ("orbit transport", Box::new(|r, _| c4_transport(r))),
        ("invariance exactness", Box::new(|r, _| c5_invariance(r))),
        ("Gram invariance", Box::new(|r, _| c6_gram(r))),
        ("gradient fidelity", Box::new(|r, _| c7_gradients(r))),
        ("Lie machinery", Box::new(|r, _| c8_lie(r))),
        ("metric sanity", Box::new(|r, _| c9_projection(r))),
        ("synthetic O(2,2)", Box::new(|_, o| c10_synthetic(o))),
        ("inertia O(3)", Box::new(|_, o| c11_inertia(o))),
        ("Lorentz classification", Box::new(|_, o| c12_lorentz(o))),
        ("noise robustness", Box::new(|_, o| c13_noise(o))),
        ("representability", Box::new(|_, o| c14_representability(o))),
    ];
    let mut failed = Vec::new();
    let mut stderr = std::io::stderr();
    // the harness has already printed "test acceptance ... " without a newline
    writeln!(stderr).unwrap();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = run(&mut rng, out.path());
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        writeln!(
            stderr,
            "acceptance {:>2} {verdict} {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        if !o.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
