//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] holds a fixed vocabulary of matrix operations. The graph is
//! declared once (inputs, parameters, constants and the ops between them),
//! then [`Tape::forward`] evaluates it for a set of named input bindings and
//! [`Tape::backward`] propagates a seed back through the nodes in reverse
//! insertion order.
//!
//! Element-wise binary ops broadcast along any dimension of size 1; their
//! adjoints sum over the broadcast dimension.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for [`Op::Sum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Everything, giving 1×1.
    All,
    /// Across columns, giving r×1.
    Rows,
    /// Across rows, giving 1×c.
    Cols,
}

/// Behaviour of the guarded reciprocal inside its guard band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    /// Output 0 (used where "no contribution" is the safe fallback).
    Zero,
    /// Clamp the argument to ±eps.
    Clamp,
}

#[derive(Debug, Clone)]
pub enum Op {
    Parameter,
    Constant,
    Input(String),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Sum(NodeId, Axis),
    Mean(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    /// sign(u)·√|u|, with value and derivative 0 where |u| < eps.
    SqrtAbsSigned(NodeId, f64),
    /// 1/u, guarded where |u| < eps.
    ReciprocalGuarded(NodeId, f64, Guard),
    /// Columns `start..end`.
    Slice(NodeId, usize, usize),
    /// Column-wise concatenation.
    Concat(Vec<NodeId>),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Parameter => "parameter",
            Op::Constant => "constant",
            Op::Input(_) => "input",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(_) => "mean",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::SqrtAbsSigned(..) => "sqrt-abs-signed",
            Op::ReciprocalGuarded(..) => "reciprocal-guarded",
            Op::Slice(..) => "slice",
            Op::Concat(_) => "concat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Option<DenseMatrix>,
    adjoint: Option<DenseMatrix>,
}

/// An append-only computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    evaluated: bool,
    guard_hits: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<DenseMatrix>) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            value,
            adjoint: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers a trainable parameter with its initial value.
    pub fn param(&mut self, name: impl Into<String>, value: DenseMatrix) -> NodeId {
        let id = self.push(Op::Parameter, Some(value));
        self.params.push((name.into(), id));
        id
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Constant, Some(value))
    }

    /// Declares a named input bound at [`Tape::forward`] time.
    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()), None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s), None)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a), None)
    }

    pub fn sum(&mut self, a: NodeId, axis: Axis) -> NodeId {
        self.push(Op::Sum(a, axis), None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), None)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a), None)
    }

    pub fn sqrt_abs_signed(&mut self, a: NodeId, eps: f64) -> NodeId {
        self.push(Op::SqrtAbsSigned(a, eps), None)
    }

    pub fn reciprocal_guarded(&mut self, a: NodeId, eps: f64, guard: Guard) -> NodeId {
        self.push(Op::ReciprocalGuarded(a, eps, guard), None)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice(a, start, end), None)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()), None)
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    /// Current value of a node (parameters and constants always have one).
    pub fn value(&self, id: NodeId) -> Result<&DenseMatrix> {
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("node {} has no value; run forward first", id.0)))
    }

    /// Overwrites a parameter or constant value.
    pub fn set_value(&mut self, id: NodeId, value: DenseMatrix) -> Result<()> {
        match self.nodes[id.0].op {
            Op::Parameter | Op::Constant => {
                let old = self.nodes[id.0].value.as_ref().map(|v| v.shape());
                if old.is_some_and(|s| s != value.shape()) {
                    return Err(Error::Graph(format!(
                        "shape change {:?} -> {:?} for node {}",
                        old.unwrap(),
                        value.shape(),
                        id.0
                    )));
                }
                self.nodes[id.0].value = Some(value);
                self.evaluated = false;
                Ok(())
            }
            _ => Err(Error::Graph(format!("node {} is not a leaf", id.0))),
        }
    }

    /// Number of guarded-op entries that fell inside their guard band
    /// during the last forward pass.
    pub fn guard_hits(&self) -> usize {
        self.guard_hits
    }

    /// Evaluates every node in insertion order.
    pub fn forward(&mut self, inputs: &HashMap<String, DenseMatrix>) -> Result<()> {
        self.guard_hits = 0;
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Parameter | Op::Constant => continue,
                Op::Input(name) => inputs
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::Graph(format!("unbound input `{name}`")))?,
                op => {
                    let op = op.clone();
                    self.eval(&op)?
                }
            };
            self.nodes[i].value = Some(value);
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &DenseMatrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs precede their consumers")
    }

    fn eval(&mut self, op: &Op) -> Result<DenseMatrix> {
        Ok(match *op {
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                if x.cols() != y.rows() {
                    return Err(shape_err("matmul", x, y));
                }
                x.matmul(y)
            }
            Op::Add(a, b) => broadcast(self.val(a), self.val(b), "add", |p, q| p + q)?,
            Op::Sub(a, b) => broadcast(self.val(a), self.val(b), "sub", |p, q| p - q)?,
            Op::Mul(a, b) => broadcast(self.val(a), self.val(b), "mul", |p, q| p * q)?,
            Op::Scale(a, s) => self.val(a).scale(s),
            Op::Transpose(a) => self.val(a).transpose(),
            Op::Sum(a, axis) => reduce(self.val(a), axis),
            Op::Mean(a) => {
                let x = self.val(a);
                let n = (x.rows() * x.cols()).max(1) as f64;
                DenseMatrix::from_raw(1, 1, vec![x.as_slice().iter().sum::<f64>() / n])
            }
            Op::Tanh(a) => self.val(a).map(fast_tanh),
            Op::Relu(a) => self.val(a).map(|v| v.max(0.0)),
            Op::Sigmoid(a) => self.val(a).map(sigmoid),
            Op::Square(a) => self.val(a).map(|v| v * v),
            Op::SqrtAbsSigned(a, eps) => {
                let x = self.val(a);
                let hits = x.as_slice().iter().filter(|v| v.abs() < eps).count();
                let out = x.map(|v| if v.abs() < eps { 0.0 } else { v.signum() * v.abs().sqrt() });
                self.guard_hits += hits;
                out
            }
            Op::ReciprocalGuarded(a, eps, guard) => {
                let x = self.val(a);
                let hits = x.as_slice().iter().filter(|v| v.abs() < eps).count();
                let out = x.map(|v| {
                    if v.abs() >= eps {
                        1.0 / v
                    } else {
                        match guard {
                            Guard::Zero => 0.0,
                            Guard::Clamp => 1.0 / clamp_sign(v, eps),
                        }
                    }
                });
                self.guard_hits += hits;
                out
            }
            Op::Slice(a, start, end) => {
                let x = self.val(a);
                if start > end || end > x.cols() {
                    return Err(Error::Graph(format!(
                        "slice {start}..{end} out of range for {} columns",
                        x.cols()
                    )));
                }
                let w = end - start;
                let mut out = Vec::with_capacity(x.rows() * w);
                for i in 0..x.rows() {
                    out.extend_from_slice(&x.row_slice(i)[start..end]);
                }
                DenseMatrix::from_raw(x.rows(), w, out)
            }
            Op::Concat(ref parts) => {
                let rows = self.val(parts[0]).rows();
                if parts.iter().any(|&p| self.val(p).rows() != rows) {
                    return Err(Error::Graph("concat row mismatch".into()));
                }
                let cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for &p in parts {
                        out.extend_from_slice(self.val(p).row_slice(i));
                    }
                }
                DenseMatrix::from_raw(rows, cols, out)
            }
            Op::Parameter | Op::Constant | Op::Input(_) => unreachable!(),
        })
    }

    /// Propagates `seed` (shaped like `output`) back through the graph.
    ///
    /// Adjoints are reset first, so repeated calls do not accumulate.
    pub fn backward(&mut self, output: NodeId, seed: &DenseMatrix) -> Result<()> {
        if !self.evaluated {
            return Err(Error::Graph("backward called before forward".into()));
        }
        if self.val(output).shape() != seed.shape() {
            return Err(Error::Graph(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape(),
                self.val(output).shape()
            )));
        }
        for node in &mut self.nodes {
            node.adjoint = None;
        }
        self.nodes[output.0].adjoint = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let Some(adj) = self.nodes[i].adjoint.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &adj);
            self.nodes[i].adjoint = Some(adj);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: DenseMatrix) {
        let slot = &mut self.nodes[id.0].adjoint;
        match slot {
            Some(existing) => {
                for (e, v) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *e += v;
                }
            }
            None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, op: &Op, adj: &DenseMatrix) {
        match *op {
            Op::Parameter | Op::Constant | Op::Input(_) => {}
            Op::MatMul(a, b) => {
                let ga = adj.matmul_nt(self.val(b));
                let gb = self.val(a).matmul_tn(adj);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Add(a, b) => {
                let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
                self.accumulate(a, unbroadcast(adj, sa));
                self.accumulate(b, unbroadcast(adj, sb));
            }
            Op::Sub(a, b) => {
                let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
                self.accumulate(a, unbroadcast(adj, sa));
                self.accumulate(b, unbroadcast(&adj.scale(-1.0), sb));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                let ga = broadcast(adj, y, "mul", |p, q| p * q).expect("forward checked shapes");
                let gb = broadcast(adj, x, "mul", |p, q| p * q).expect("forward checked shapes");
                let (sa, sb) = (x.shape(), y.shape());
                self.accumulate(a, unbroadcast(&ga, sa));
                self.accumulate(b, unbroadcast(&gb, sb));
            }
            Op::Scale(a, s) => self.accumulate(a, adj.scale(s)),
            Op::Transpose(a) => self.accumulate(a, adj.transpose()),
            Op::Sum(a, axis) => {
                let (r, c) = self.val(a).shape();
                let g = DenseMatrix::from_raw(
                    r,
                    c,
                    (0..r * c)
                        .map(|k| match axis {
                            Axis::All => adj.as_slice()[0],
                            Axis::Rows => adj.as_slice()[k / c],
                            Axis::Cols => adj.as_slice()[k % c],
                        })
                        .collect(),
                );
                self.accumulate(a, g);
            }
            Op::Mean(a) => {
                let (r, c) = self.val(a).shape();
                let g = adj.as_slice()[0] / ((r * c).max(1) as f64);
                self.accumulate(a, DenseMatrix::filled(r, c, g));
            }
            Op::Tanh(_) | Op::Sigmoid(_) => {
                let out = self.nodes[i].value.as_ref().unwrap();
                let g = match *op {
                    Op::Tanh(_) => adj.zip_map(out, |g, t| g * (1.0 - t * t)),
                    _ => adj.zip_map(out, |g, s| g * s * (1.0 - s)),
                };
                let a = match *op {
                    Op::Tanh(a) | Op::Sigmoid(a) => a,
                    _ => unreachable!(),
                };
                self.accumulate(a, g);
            }
            Op::Relu(a) => {
                let g = adj.zip_map(self.val(a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(a, g);
            }
            Op::Square(a) => {
                let g = adj.zip_map(self.val(a), |g, x| 2.0 * g * x);
                self.accumulate(a, g);
            }
            Op::SqrtAbsSigned(a, eps) => {
                let g = adj.zip_map(self.val(a), |g, u| {
                    if u.abs() < eps {
                        0.0
                    } else {
                        g * 0.5 / u.abs().sqrt()
                    }
                });
                self.accumulate(a, g);
            }
            Op::ReciprocalGuarded(a, eps, _) => {
                let g = adj.zip_map(self.val(a), |g, u| {
                    if u.abs() < eps {
                        0.0
                    } else {
                        -g / (u * u)
                    }
                });
                self.accumulate(a, g);
            }
            Op::Slice(a, start, end) => {
                let (r, c) = self.val(a).shape();
                let mut g = DenseMatrix::zeros(r, c);
                let w = end - start;
                for row in 0..r {
                    for k in 0..w {
                        g[(row, start + k)] = adj[(row, k)];
                    }
                }
                self.accumulate(a, g);
            }
            Op::Concat(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.val(p).shape();
                    let mut g = DenseMatrix::zeros(r, c);
                    for row in 0..r {
                        for k in 0..c {
                            g[(row, k)] = adj[(row, offset + k)];
                        }
                    }
                    offset += c;
                    self.accumulate(p, g);
                }
            }
        }
    }

    /// Adjoint of a node after [`Tape::backward`]; zeros if unreached.
    pub fn grad(&self, id: NodeId) -> Result<DenseMatrix> {
        let (r, c) = self.value(id)?.shape();
        Ok(self.nodes[id.0]
            .adjoint
            .clone()
            .unwrap_or_else(|| DenseMatrix::zeros(r, c)))
    }

    /// Gradients of every parameter in declaration order.
    pub fn param_grads(&self) -> Result<Vec<DenseMatrix>> {
        self.params.iter().map(|&(_, id)| self.grad(id)).collect()
    }

    pub fn op_kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.kind()
    }

    /// Finite-difference check of every parameter gradient of a scalar output.
    ///
    /// Returns the largest relative error `|g − fd| / max(|g|, 1e-8)` and the
    /// number of coordinates skipped because a guarded op sat inside its
    /// guard band at one of the evaluation points.
    pub fn grad_check(
        &mut self,
        output: NodeId,
        inputs: &HashMap<String, DenseMatrix>,
        eps: f64,
    ) -> Result<GradCheck> {
        self.forward(inputs)?;
        if self.val(output).shape() != (1, 1) {
            return Err(Error::Graph("grad_check needs a scalar output".into()));
        }
        let base_hits = self.guard_hits;
        self.backward(output, &DenseMatrix::filled(1, 1, 1.0))?;
        let grads = self.param_grads()?;
        let mut report = GradCheck::default();
        let params: Vec<NodeId> = self.params.iter().map(|&(_, id)| id).collect();
        for (p, g) in params.iter().zip(&grads) {
            let original = self.val(*p).clone();
            for k in 0..original.as_slice().len() {
                let eval_at = |delta: f64, tape: &mut Tape| -> Result<(f64, usize)> {
                    let mut v = original.clone();
                    v.as_mut_slice()[k] += delta;
                    tape.set_value(*p, v)?;
                    tape.forward(inputs)?;
                    Ok((tape.val(output).as_slice()[0], tape.guard_hits))
                };
                let (fp, hp) = eval_at(eps, self)?;
                let (fm, hm) = eval_at(-eps, self)?;
                self.set_value(*p, original.clone())?;
                if hp != base_hits || hm != base_hits || base_hits > 0 {
                    report.skipped += 1;
                    continue;
                }
                let fd = (fp - fm) / (2.0 * eps);
                let ad = g.as_slice()[k];
                let rel = (ad - fd).abs() / ad.abs().max(1e-8);
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                }
            }
        }
        self.forward(inputs)?;
        Ok(report)
    }
}

/// Outcome of [`Tape::grad_check`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn clamp_sign(v: f64, eps: f64) -> f64 {
    if v < 0.0 {
        -eps
    } else {
        eps
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::Graph(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

/// tanh through a single exp (about 2.5× faster than libm here). Absolute
/// error stays within a few ulps of 1.
fn fast_tanh(x: f64) -> f64 {
    let e = (2.0 * x.abs()).exp();
    (1.0 - 2.0 / (e + 1.0)).copysign(x)
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast(
    a: &DenseMatrix,
    b: &DenseMatrix,
    op: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DenseMatrix> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let r = broadcast_dim(a.rows(), b.rows()).ok_or_else(|| shape_err(op, a, b))?;
    let c = broadcast_dim(a.cols(), b.cols()).ok_or_else(|| shape_err(op, a, b))?;
    let mut out = Vec::with_capacity(r * c);
    let (ar, ac) = (a.rows() > 1, a.cols() > 1);
    let (br, bc) = (b.rows() > 1, b.cols() > 1);
    for i in 0..r {
        for j in 0..c {
            let x = a[(if ar { i } else { 0 }, if ac { j } else { 0 })];
            let y = b[(if br { i } else { 0 }, if bc { j } else { 0 })];
            out.push(f(x, y));
        }
    }
    Ok(DenseMatrix::from_raw(r, c, out))
}

fn reduce(x: &DenseMatrix, axis: Axis) -> DenseMatrix {
    let (r, c) = x.shape();
    match axis {
        Axis::All => DenseMatrix::from_raw(1, 1, vec![x.as_slice().iter().sum()]),
        Axis::Rows => DenseMatrix::from_raw(r, 1, (0..r).map(|i| x.row_slice(i).iter().sum()).collect()),
        Axis::Cols => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                    *o += v;
                }
            }
            DenseMatrix::from_raw(1, c, out)
        }
    }
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn unbroadcast(g: &DenseMatrix, shape: (usize, usize)) -> DenseMatrix {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = g.clone();
    if shape.0 == 1 && out.rows() != 1 {
        out = reduce(&out, Axis::Cols);
    }
    if shape.1 == 1 && out.cols() != 1 {
        out = reduce(&out, Axis::Rows);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn bind(pairs: &[(&str, DenseMatrix)]) -> HashMap<String, DenseMatrix> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let x = t.input("x");
        t.forward(&bind(&[("x", m(&[&[1.0, 2.0]]))])).unwrap();
        assert_eq!(t.value(x).unwrap().as_slice(), &[1.0, 2.0]);

        let mut t = Tape::new();
        let w = t.param("w", DenseMatrix::identity(2));
        let x = t.input("x");
        let y = t.matmul(w, x);
        t.forward(&bind(&[("x", m(&[&[3.0], &[4.0]]))])).unwrap();
        assert_eq!(t.value(y).unwrap().as_slice(), &[3.0, 4.0]);

        let mut t = Tape::new();
        let z = t.constant(DenseMatrix::zeros(1, 1));
        let y = t.tanh(z);
        t.forward(&HashMap::new()).unwrap();
        assert_eq!(t.value(y).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn forward_errors() {
        let mut t = Tape::new();
        let x = t.input("x");
        let w = t.param("w", DenseMatrix::identity(3));
        t.matmul(w, x);
        assert!(matches!(t.forward(&HashMap::new()), Err(Error::Graph(_))));
        assert!(t.forward(&bind(&[("x", DenseMatrix::zeros(2, 1))])).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let w = t.param("w", DenseMatrix::filled(1, 1, 3.0));
        let y = t.square(w);
        assert!(t.backward(y, &DenseMatrix::filled(1, 1, 1.0)).is_err());
        t.forward(&HashMap::new()).unwrap();
        t.backward(y, &DenseMatrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(t.grad(w).unwrap().as_slice(), &[6.0]);

        let mut t = Tape::new();
        let w = t.param("w", DenseMatrix::filled(1, 1, 5.0));
        let both = t.concat(&[w, w]);
        let y = t.mean(both);
        t.forward(&HashMap::new()).unwrap();
        t.backward(y, &DenseMatrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(t.grad(w).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn matmul_gradient_is_seed_times_input_transpose() {
        let mut t = Tape::new();
        let w = t.param("w", m(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]]));
        let x = t.constant(m(&[&[1.0], &[-2.0], &[3.0]]));
        let y = t.matmul(w, x);
        t.forward(&HashMap::new()).unwrap();
        let seed = m(&[&[0.3], &[-1.1]]);
        t.backward(y, &seed).unwrap();
        let want = seed.matmul(&m(&[&[1.0, -2.0, 3.0]]));
        assert_eq!(t.grad(w).unwrap(), want);
        // finite-difference confirmation of the identity
        let mut t2 = t.clone();
        let s = t2.constant(seed.clone());
        let prod = t2.mul(y, s);
        let out = t2.sum(prod, Axis::All);
        let report = t2.grad_check(out, &HashMap::new(), 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn quadratic_bowl_grad_check() {
        let mut t = Tape::new();
        let w = t.param("w", m(&[&[1.0, -2.0, 0.5]]));
        let c = t.constant(m(&[&[0.3, 0.1, -0.4]]));
        let d = t.sub(w, c);
        let sq = t.square(d);
        let out = t.sum(sq, Axis::All);
        let report = t.grad_check(out, &HashMap::new(), 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn mlp_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand = |r: usize, c: usize| {
            DenseMatrix::from_raw(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let mut t = Tape::new();
        let x = t.input("x");
        let w1 = t.param("w1", rand(3, 8));
        let b1 = t.param("b1", rand(1, 8));
        let w2 = t.param("w2", rand(8, 2));
        let b2 = t.param("b2", rand(1, 2));
        let h = t.matmul(x, w1);
        let h = t.add(h, b1);
        let h = t.tanh(h);
        let o = t.matmul(h, w2);
        let o = t.add(o, b2);
        let sq = t.square(o);
        let loss = t.mean(sq);
        let inputs = bind(&[("x", rand(5, 3))]);
        let report = t.grad_check(loss, &inputs, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn guarded_points_are_skipped() {
        let mut t = Tape::new();
        let w = t.param("w", m(&[&[0.0, 4.0]]));
        let r = t.sqrt_abs_signed(w, 1e-8);
        let out = t.sum(r, Axis::All);
        let report = t.grad_check(out, &HashMap::new(), 1e-5).unwrap();
        assert_eq!(report.skipped, 2);
        t.forward(&HashMap::new()).unwrap();
        assert_eq!(t.guard_hits(), 1);
        t.backward(out, &DenseMatrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(t.grad(w).unwrap().as_slice(), &[0.0, 0.25]);
    }

    #[test]
    fn guarded_reciprocal_modes() {
        let mut t = Tape::new();
        let u = t.constant(m(&[&[0.0, -1e-20, 2.0]]));
        let z = t.reciprocal_guarded(u, 1e-6, Guard::Zero);
        let c = t.reciprocal_guarded(u, 1e-6, Guard::Clamp);
        t.forward(&HashMap::new()).unwrap();
        assert_eq!(t.value(z).unwrap().as_slice(), &[0.0, 0.0, 0.5]);
        assert_eq!(t.value(c).unwrap().as_slice(), &[1e6, -1e6, 0.5]);
    }

    #[test]
    fn broadcasting_adjoints() {
        let mut t = Tape::new();
        let a = t.param("a", m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let col = t.param("col", m(&[&[0.5], &[-1.0], &[2.0]]));
        let row = t.param("row", m(&[&[0.1, 0.2]]));
        let s = t.param("s", m(&[&[1.5]]));
        let p = t.mul(a, col);
        let p = t.add(p, row);
        let p = t.mul(p, s);
        let q = t.square(p);
        let out = t.sum(q, Axis::All);
        let report = t.grad_check(out, &HashMap::new(), 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn backward_is_linear_in_seed() {
        let mut t = Tape::new();
        let w = t.param("w", m(&[&[0.2, -0.3], &[0.7, 1.1]]));
        let x = t.constant(m(&[&[1.0, 2.0]]));
        let h = t.matmul(x, w);
        let y = t.sigmoid(h);
        t.forward(&HashMap::new()).unwrap();
        let seed = m(&[&[0.4, -0.9]]);
        t.backward(y, &seed).unwrap();
        let g1 = t.grad(w).unwrap();
        t.backward(y, &seed.scale(-2.5)).unwrap();
        let g2 = t.grad(w).unwrap();
        assert!(g2.sub(&g1.scale(-2.5)).max_abs() < 1e-15);
    }
}
