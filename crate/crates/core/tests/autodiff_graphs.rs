use std::collections::HashMap;

use gortho::autodiff::{Axis, Guard, NodeId, Tape};
use gortho::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries bounded away from zero so no gradient coordinate is so small that
/// central differences drown in roundoff.
fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    let mut entry = || {
        let v: f64 = rng.random_range(0.3..1.0);
        if rng.random_bool(0.5) { -v } else { v }
    };
    DenseMatrix::new(r, c, (0..r * c).map(|_| entry()).collect()).unwrap()
}

/// Builds a random graph over the full op vocabulary with a scalar output.
fn random_graph(rng: &mut ChaCha8Rng) -> (Tape, NodeId, HashMap<String, DenseMatrix>) {
    let mut t = Tape::new();
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=4);
    let x = t.input("x");
    let inputs: HashMap<_, _> = [("x".to_string(), random_matrix(rng, r, c))].into();
    let w = t.param("w0", random_matrix(rng, r, c));
    let mut cur = t.mul(x, w);
    let mut shape = (r, c);
    let half = |t: &mut Tape, rows: usize, cols: usize| t.constant(DenseMatrix::filled(rows, cols, 0.5));
    for step in 0..rng.random_range(3..10) {
        let name = format!("p{step}");
        match rng.random_range(0..16) {
            0 => {
                let k = rng.random_range(1..=4);
                let p = t.param(name, random_matrix(rng, shape.1, k));
                cur = t.matmul(cur, p);
                shape.1 = k;
            }
            1 => {
                let p = t.param(name, random_matrix(rng, shape.0, shape.1));
                cur = t.add(cur, p);
            }
            2 => {
                let p = t.param(name, random_matrix(rng, 1, shape.1));
                cur = t.sub(cur, p);
            }
            3 => {
                let p = t.param(name, random_matrix(rng, shape.0, 1));
                cur = t.mul(cur, p);
            }
            4 => cur = t.scale(cur, rng.random_range(-2.0..2.0)),
            5 => {
                cur = t.transpose(cur);
                shape = (shape.1, shape.0);
            }
            6 => {
                if rng.random_bool(0.5) {
                    cur = t.sum(cur, Axis::Rows);
                    cur = t.scale(cur, 1.0 / shape.1 as f64);
                    shape.1 = 1;
                } else {
                    cur = t.sum(cur, Axis::Cols);
                    cur = t.scale(cur, 1.0 / shape.0 as f64);
                    shape.0 = 1;
                }
            }
            7 => cur = t.tanh(cur),
            8 => cur = t.sigmoid(cur),
            9 => {
                let bounded = t.tanh(cur);
                cur = t.square(bounded);
            }
            10 => {
                let off = half(&mut t, 1, 1);
                let u = t.add(cur, off);
                cur = t.relu(u);
            }
            11 => {
                let sq = t.square(cur);
                let off = half(&mut t, 1, 1);
                let u = t.add(sq, off);
                let u = if rng.random_bool(0.5) { t.scale(u, -1.0) } else { u };
                cur = t.sqrt_abs_signed(u, 1e-8);
            }
            12 => {
                let sq = t.square(cur);
                let off = t.constant(DenseMatrix::filled(1, 1, 1.0));
                let u = t.add(sq, off);
                cur = t.reciprocal_guarded(u, 1e-8, Guard::Clamp);
            }
            13 if shape.1 > 1 => {
                let start = rng.random_range(0..shape.1 - 1);
                let end = rng.random_range(start + 1..=shape.1);
                cur = t.slice(cur, start, end);
                shape.1 = end - start;
            }
            14 if shape.1 < 8 => {
                let p = t.param(name, random_matrix(rng, shape.0, 2));
                cur = t.concat(&[cur, p]);
                shape.1 += 2;
            }
            15 => {
                let m = t.mean(cur);
                let p = t.param(name, random_matrix(rng, shape.0, shape.1));
                let scaled = t.mul(p, m);
                cur = t.add(cur, scaled);
            }
            _ => cur = t.tanh(cur),
        }
        assert!(shape.0 <= 16 && shape.1 <= 16);
    }
    let sq = t.square(cur);
    let out = t.sum(sq, Axis::All);
    (t, out, inputs)
}

#[test]
fn fifty_random_graphs_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (mut tape, out, inputs) = random_graph(&mut rng);
        let report = tape.grad_check(out, &inputs, 1e-5).unwrap();
        assert!(report.checked > 0);
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn forward_replay_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (mut tape, out, inputs) = random_graph(&mut rng);
        tape.forward(&inputs).unwrap();
        let first = tape.value(out).unwrap().clone();
        tape.forward(&inputs).unwrap();
        assert_eq!(first.as_slice()[0].to_bits(), tape.value(out).unwrap().as_slice()[0].to_bits());
    }
}

#[test]
fn non_scalar_output_rejected_by_grad_check() {
    let mut t = Tape::new();
    let w = t.param("w", DenseMatrix::identity(2));
    let y = t.tanh(w);
    assert!(t.grad_check(y, &HashMap::new(), 1e-5).is_err());
}
