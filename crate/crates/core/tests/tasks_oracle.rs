use gortho::group::sample_element;
use gortho::model::Action;
use gortho::tasks::{
    act_on_target, augment_with_group, gen_inertia, gen_lorentz_cls, gen_synthetic_o22, inertia_target,
    synthetic_target, Dataset,
};
use gortho::{DenseMatrix, QuadraticForm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 9(xxᵀA)² + 2xxᵀA written out entry by entry.
fn synthetic_oracle(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let ax: Vec<f64> = (0..n).map(|i| (0..n).map(|k| a[(i, k)] * x[k]).sum()).collect();
    let q: f64 = x.iter().zip(&ax).map(|(u, v)| u * v).sum();
    // xxᵀA has entries x_i (Ax)_j, and its square is q·xxᵀA
    (0..n * n).map(|k| (9.0 * q + 2.0) * x[k / n] * ax[k % n]).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn reduced_synthetic_example() {
    let a = DenseMatrix::from_diag(&[1.0, -1.0]);
    let f = synthetic_target(&a, &[1.0, 0.0]);
    assert_eq!(f.as_slice(), &[11.0, 0.0, 0.0, 0.0]);
}

#[test]
fn inertia_examples() {
    let one = inertia_target(&[vec![1.0, 0.0, 0.0]], &[1.0]);
    assert_eq!(one.as_slice(), DenseMatrix::from_diag(&[0.0, 1.0, 1.0]).as_slice());
    let two = inertia_target(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], &[1.0, 1.0]);
    assert_eq!(two.as_slice(), DenseMatrix::from_diag(&[1.0, 1.0, 2.0]).as_slice());
}

#[test]
fn synthetic_targets_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = gen_synthetic_o22(500, &mut rng).unwrap();
    let sig = ds.true_form.signature();
    assert_eq!((sig.p, sig.q, sig.z), (2, 2, 0));
    assert_eq!(ds.action, Action::Conjugation);
    for i in 0..ds.len() {
        let want = synthetic_oracle(ds.true_form.matrix(), ds.point(i, 0));
        assert!(close(ds.targets.row_slice(i), &want, 1e-12), "sample {i}");
        assert!(ds.true_form.eval(ds.point(i, 0)).unwrap().abs() >= 0.1);
    }
}

#[test]
fn inertia_targets_are_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = gen_inertia(5, 300, &mut rng).unwrap();
    assert_eq!(ds.true_form, QuadraticForm::identity(3));
    let masses = ds.masses.as_ref().unwrap();
    for i in 0..ds.len() {
        let t = DenseMatrix::new(3, 3, ds.targets.row_slice(i).to_vec()).unwrap();
        assert_eq!(t.max_asymmetry(), 0.0);
        let (_, d) = gortho::numerics::sym_eig(&t, 1e-14).unwrap();
        assert!(d.iter().all(|&v| v >= -1e-12));
        assert!(masses.row_slice(i).iter().all(|m| (0.1..2.0).contains(m)));
    }
}

#[test]
fn lorentz_labels_balanced_and_gauged_form_is_half_eta() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = gen_lorentz_cls(10_000, &mut rng).unwrap();
    let positive = ds.targets.as_slice().iter().sum::<f64>() / ds.len() as f64;
    assert!((positive - 0.5).abs() <= 0.05, "balance {positive}");
    let g = ds.true_form.canonical_gauge().unwrap();
    let half = DenseMatrix::from_diag(&[0.5, -0.5, -0.5, -0.5]);
    assert!(g.matrix().sub(&half).max_abs() <= 1e-15);
}

#[test]
fn transformed_pairs_satisfy_the_task_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = gen_synthetic_o22(200, &mut rng).unwrap();
    for i in 0..ds.len() {
        let g = sample_element(&ds.true_form, &mut rng, 0.3).unwrap();
        let gi = g.inverse().unwrap();
        let moved = act_on_target(Action::Conjugation, g.matrix(), gi.matrix(), ds.targets.row_slice(i));
        let want = synthetic_oracle(ds.true_form.matrix(), &g.apply(ds.point(i, 0)));
        assert!(close(&moved, &want, 1e-8));
    }
}

#[test]
fn augmentation_preserves_the_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = gen_synthetic_o22(50, &mut rng).unwrap();
    let same = augment_with_group(&ds, &mut rng, 0).unwrap();
    assert_eq!(same.inputs, ds.inputs);
    let aug = augment_with_group(&ds, &mut rng, 2).unwrap();
    assert_eq!(aug.len(), 150);
    for i in 0..aug.len() {
        let want = synthetic_oracle(aug.true_form.matrix(), aug.point(i, 0));
        assert!(close(aug.targets.row_slice(i), &want, 1e-8));
    }
    let lz = gen_lorentz_cls(40, &mut rng).unwrap();
    let lz_aug = augment_with_group(&lz, &mut rng, 1).unwrap();
    assert_eq!(&lz_aug.targets.as_slice()[40..], lz.targets.as_slice());
}

#[test]
fn dataset_text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = gen_inertia(3, 10, &mut rng).unwrap();
    let back = Dataset::from_text(&ds.header().unwrap(), &ds.to_text()).unwrap();
    assert_eq!(back.inputs, ds.inputs);
    assert_eq!(back.targets, ds.targets);
    assert_eq!(back.masses, ds.masses);
}
