//! The network: a learnable (or frozen) quadratic form, the pseudonorm
//! features, and the φ_s / φ_n pair combined according to the action type.
//!
//! Everything runs on a single [`Tape`] built once per model. Samples are
//! batched along rows; conjugation outputs are n×n matrices flattened
//! row-major into n² columns.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Guard, NodeId, Tape};
use crate::error::{dim_err, Error, Result};
use crate::group::{a_householder, GroupElement, CLOSURE_TOL, MEMBER_TOL};
use crate::numerics::DenseMatrix;
use crate::quadform::QuadraticForm;

/// Added multiple of x̂ in each reflection direction.
pub const SKIP: f64 = 0.1;

/// Below this squared length a Euclidean reflection factor becomes I.
pub const HOUSEHOLDER_GUARD: f64 = 1e-12;

/// Clamp for 1/(wᵀAw) and 1/r during training.
pub const TRAIN_CLAMP: f64 = 1e-6;

/// Null-cone band of the signed square root on the tape.
pub const SQRT_GUARD: f64 = 1e-12;

const BLOB_MAGIC: &[u8; 4] = b"GON1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Invariant,
    Left,
    Conjugation,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Action::Invariant => "invariant",
            Action::Left => "left",
            Action::Conjugation => "conjugation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Single vector input or a tuple of `points` vectors, optionally with one
/// mass per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Single,
    Tuple { points: usize, masses: bool },
}

impl InputMode {
    pub fn points(&self) -> usize {
        match *self {
            InputMode::Single => 1,
            InputMode::Tuple { points, .. } => points,
        }
    }

    pub fn has_masses(&self) -> bool {
        matches!(self, InputMode::Tuple { masses: true, .. })
    }
}

/// Which normalized points φ_s sees in tuple mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiSInput {
    /// x₁/‖x₁‖_A only.
    #[default]
    First,
    /// Every x_i/‖x_i‖_A, concatenated.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n: usize,
    pub action: Action,
    pub mode: InputMode,
    /// Output width of φ_n in invariant mode.
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Symmetrize M before conjugating (symmetric targets).
    pub symmetric: bool,
    /// Number of A-Householder factors composed into φ_s.
    pub reflections: usize,
    pub phi_s_input: PhiSInput,
}

impl NetConfig {
    pub fn new(n: usize, action: Action) -> Self {
        Self {
            n,
            action,
            mode: InputMode::Single,
            out_dim: 1,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            symmetric: false,
            reflections: 1,
            phi_s_input: PhiSInput::First,
        }
    }

    /// Width of one output row.
    pub fn output_width(&self) -> usize {
        match self.action {
            Action::Invariant => self.out_dim,
            Action::Left => self.n,
            Action::Conjugation => self.n * self.n,
        }
    }

    /// Width of one input row (points stacked).
    pub fn input_width(&self) -> usize {
        self.n * self.mode.points()
    }

    fn phi_n_inputs(&self) -> usize {
        match self.mode {
            InputMode::Single => 1,
            InputMode::Tuple { points, masses } => {
                points * (points + 1) / 2 + if masses { points } else { 0 }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if self.mode.points() == 0 {
            return Err(Error::Invalid("tuple mode needs at least one point".into()));
        }
        if self.action == Action::Invariant && self.out_dim == 0 {
            return Err(Error::Invalid("invariant output width must be positive".into()));
        }
        if self.action != Action::Invariant && self.reflections == 0 {
            return Err(Error::Invalid("at least one reflection is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected network living on a tape.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    activation: Activation,
}

impl Mlp {
    /// Declares the layers as parameters (Glorot-uniform weights, zero
    /// biases) and wires them after `input`; returns the network and its
    /// linear output node.
    pub fn build<R: Rng + ?Sized>(
        tape: &mut Tape,
        prefix: &str,
        input: NodeId,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> (Self, NodeId) {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut cur = input;
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let w = tape.param(
                format!("{prefix}.w{l}"),
                DenseMatrix::from_raw(fan_in, fan_out, data),
            );
            let b = tape.param(format!("{prefix}.b{l}"), DenseMatrix::zeros(1, fan_out));
            let z = tape.matmul(cur, w);
            cur = tape.add(z, b);
            if l + 2 < widths.len() {
                cur = match activation {
                    Activation::Tanh => tape.tanh(cur),
                    Activation::Relu => tape.relu(cur),
                };
            }
            weights.push(w);
            biases.push(b);
        }
        (
            Self {
                widths: widths.to_vec(),
                weights,
                biases,
                activation,
            },
            cur,
        )
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Zeroes every weight and bias.
    pub fn zero(&self, tape: &mut Tape) -> Result<()> {
        for &id in self.weights.iter().chain(&self.biases) {
            let (r, c) = tape.value(id)?.shape();
            tape.set_value(id, DenseMatrix::zeros(r, c))?;
        }
        Ok(())
    }

    /// Zeroes the final weight matrix and bias.
    pub fn zero_output(&self, tape: &mut Tape) -> Result<()> {
        for &id in [self.weights.last(), self.biases.last()].into_iter().flatten() {
            let (r, c) = tape.value(id)?.shape();
            tape.set_value(id, DenseMatrix::zeros(r, c))?;
        }
        Ok(())
    }

    /// Overwrites the final bias.
    pub fn set_output_bias(&self, tape: &mut Tape, bias: &[f64]) -> Result<()> {
        let id = *self.biases.last().expect("at least one layer");
        let c = tape.value(id)?.cols();
        if bias.len() != c {
            return Err(dim_err(c, bias.len()));
        }
        tape.set_value(id, DenseMatrix::new(1, c, bias.to_vec())?)
    }
}

/// Parameters of a learnable form A = Uᵀ diag(d) U with U a product of n
/// Starting point of a learnable form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormInit {
    /// D = I and U near the identity.
    Identity,
    /// Gaussian Householder vectors and d.
    #[default]
    Random,
}

/// Euclidean reflections.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableForm {
    /// Column i is the i-th reflection vector.
    pub householder_vectors: DenseMatrix,
    pub d_params: Vec<f64>,
}

impl LearnableForm {
    /// v_i = e_i + N(0, 0.01²), d = 1.
    pub fn init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, 0.01).expect("valid std dev");
        let mut v = DenseMatrix::identity(n);
        for x in v.as_mut_slice() {
            *x += noise.sample(rng);
        }
        Self {
            householder_vectors: v,
            d_params: vec![1.0; n],
        }
    }

    /// Householder vectors and d drawn from N(0, 1): a generic rotation and
    /// signature, so U has a gradient from the first step.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v = DenseMatrix::zeros(n, n);
        for x in v.as_mut_slice() {
            *x = StandardNormal.sample(rng);
        }
        Self {
            householder_vectors: v,
            d_params: (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    pub fn with_init<R: Rng + ?Sized>(n: usize, init: FormInit, rng: &mut R) -> Self {
        match init {
            FormInit::Identity => Self::init(n, rng),
            FormInit::Random => Self::random(n, rng),
        }
    }

    /// (U, A) evaluated without a tape.
    pub fn realize(&self) -> (DenseMatrix, DenseMatrix) {
        let n = self.d_params.len();
        let mut u = DenseMatrix::identity(n);
        for i in 0..n {
            let v = self.householder_vectors.col_vec(i);
            let vv: f64 = v.iter().map(|x| x * x).sum();
            if vv < HOUSEHOLDER_GUARD {
                continue;
            }
            let h = DenseMatrix::from_raw(
                n,
                n,
                (0..n * n)
                    .map(|k| {
                        let (r, c) = (k / n, k % n);
                        f64::from(u8::from(r == c)) - 2.0 * v[r] * v[c] / vv
                    })
                    .collect(),
            );
            u = u.matmul(&h);
        }
        let a = u.transpose().matmul(&DenseMatrix::from_diag(&self.d_params).matmul(&u));
        (u, a.symmetric_part())
    }
}

/// Realizes a learnable form as a [`QuadraticForm`].
pub fn realize_form(lf: &LearnableForm) -> Result<QuadraticForm> {
    QuadraticForm::symmetrize(&lf.realize().1)
}

/// Where the network's form comes from.
#[derive(Debug, Clone)]
pub enum FormSource {
    Frozen(QuadraticForm),
    Learnable(LearnableForm),
}

#[derive(Debug, Clone)]
enum FormNodes {
    Frozen,
    Learnable { v: NodeId, d: NodeId, u: NodeId },
}

/// A batch of inputs: one row per sample.
#[derive(Debug, Clone)]
pub struct Batch {
    /// B × (points·n), points stacked left to right.
    pub x: DenseMatrix,
    /// B × points, tuple mode with masses only.
    pub masses: Option<DenseMatrix>,
}

impl Batch {
    pub fn single(x: DenseMatrix) -> Self {
        Self { x, masses: None }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// The G-orthogonal network.
#[derive(Debug, Clone)]
pub struct GOrthoNet {
    config: NetConfig,
    tape: Tape,
    form_nodes: FormNodes,
    a: NodeId,
    /// Per point: pseudonorm node (B×1).
    radii: Vec<NodeId>,
    features: NodeId,
    directions: Vec<NodeId>,
    phi_s: Option<Mlp>,
    phi_n: Mlp,
    phi_n_out: NodeId,
    output: NodeId,
    frozen: Option<QuadraticForm>,
}

impl GOrthoNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, form: FormSource, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let mut t = Tape::new();

        let (a, form_nodes, frozen) = match form {
            FormSource::Frozen(f) => {
                if f.dim() != n {
                    return Err(dim_err(n, f.dim()));
                }
                let a = t.constant(f.matrix().clone());
                (a, FormNodes::Frozen, Some(f))
            }
            FormSource::Learnable(lf) => {
                if lf.d_params.len() != n || lf.householder_vectors.shape() != (n, n) {
                    return Err(dim_err(n, lf.d_params.len()));
                }
                let (a, nodes) = build_learnable_form(&mut t, &lf);
                (a, nodes, None)
            }
        };

        let x = t.input("x");
        let points = config.mode.points();
        let parts: Vec<NodeId> = (0..points)
            .map(|i| if points == 1 { x } else { t.slice(x, i * n, (i + 1) * n) })
            .collect();
        let xa: Vec<NodeId> = parts.iter().map(|&p| t.matmul(p, a)).collect();
        let mut radii = Vec::with_capacity(points);
        let mut gram = Vec::new();
        for i in 0..points {
            for j in i..points {
                let prod = t.mul(xa[i], parts[j]);
                let g = t.sum(prod, Axis::Rows);
                if i == j {
                    radii.push(t.sqrt_abs_signed(g, SQRT_GUARD));
                }
                gram.push(g);
            }
        }

        let features = match config.mode {
            InputMode::Single => radii[0],
            InputMode::Tuple { masses, .. } => {
                if masses {
                    let m = t.input("m");
                    gram.push(m);
                }
                t.concat(&gram)
            }
        };

        let out_width = config.output_width();
        let mut widths = vec![config.phi_n_inputs()];
        widths.extend(&config.hidden);
        widths.push(out_width);

        let (phi_s, directions) = if config.action == Action::Invariant {
            (None, Vec::new())
        } else {
            let hats: Vec<NodeId> = match config.phi_s_input {
                PhiSInput::First => vec![normalize(&mut t, parts[0], radii[0])],
                PhiSInput::All => (0..points)
                    .map(|i| normalize(&mut t, parts[i], radii[i]))
                    .collect(),
            };
            let hat_in = if hats.len() == 1 { hats[0] } else { t.concat(&hats) };
            let mut s_widths = vec![n * hats.len()];
            s_widths.extend(&config.hidden);
            s_widths.push(n * config.reflections);
            let (mlp, raw) = Mlp::build(&mut t, "phi_s", hat_in, &s_widths, config.activation, rng);
            // zero output layer: w starts as the skip term alone
            mlp.zero_output(&mut t)?;
            let skip = t.scale(hats[0], SKIP);
            let dirs = (0..config.reflections)
                .map(|k| {
                    let part = if config.reflections == 1 {
                        raw
                    } else {
                        t.slice(raw, k * n, (k + 1) * n)
                    };
                    t.add(part, skip)
                })
                .collect();
            (Some(mlp), dirs)
        };

        let (phi_n, phi_n_out) = Mlp::build(&mut t, "phi_n", features, &widths, config.activation, rng);
        let mut out = phi_n_out;

        match config.action {
            Action::Invariant => {}
            Action::Left => {
                for &w in directions.iter().rev() {
                    out = reflect_rows(&mut t, a, w, out);
                }
            }
            Action::Conjugation => {
                let sel = Selectors::new(n);
                let s = sel.declare(&mut t);
                if config.symmetric {
                    let tr = t.matmul(out, s.transpose_perm);
                    let sum = t.add(out, tr);
                    out = t.scale(sum, 0.5);
                }
                for &w in directions.iter().rev() {
                    out = conjugate_rows(&mut t, a, w, out, &s);
                }
            }
        }

        Ok(Self {
            config,
            tape: t,
            form_nodes,
            a,
            radii,
            features,
            directions,
            phi_s,
            phi_n,
            phi_n_out,
            output: out,
            frozen,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn phi_n(&self) -> &Mlp {
        &self.phi_n
    }

    pub fn phi_s(&self) -> Option<&Mlp> {
        self.phi_s.as_ref()
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self.form_nodes, FormNodes::Learnable { .. })
    }

    /// Current learnable form parameters, if any.
    pub fn learnable_form(&self) -> Option<LearnableForm> {
        match self.form_nodes {
            FormNodes::Frozen => None,
            FormNodes::Learnable { v, d, .. } => Some(LearnableForm {
                householder_vectors: self.tape.value(v).ok()?.clone(),
                d_params: self.tape.value(d).ok()?.as_slice().to_vec(),
            }),
        }
    }

    /// The form currently realized by the parameters.
    pub fn form(&self) -> Result<QuadraticForm> {
        match &self.frozen {
            Some(f) => Ok(f.clone()),
            None => realize_form(&self.learnable_form().expect("learnable")),
        }
    }

    /// U and A as computed on the tape by the last forward pass.
    pub fn taped_form(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let a = self.tape.value(self.a)?.clone();
        let u = match self.form_nodes {
            FormNodes::Learnable { u, .. } => self.tape.value(u)?.clone(),
            FormNodes::Frozen => DenseMatrix::identity(self.config.n),
        };
        Ok((u, a))
    }

    fn bindings(&self, batch: &Batch) -> Result<HashMap<String, DenseMatrix>> {
        if batch.x.cols() != self.config.input_width() {
            return Err(dim_err(self.config.input_width(), batch.x.cols()));
        }
        let mut map = HashMap::from([("x".to_string(), batch.x.clone())]);
        if self.config.mode.has_masses() {
            let m = batch
                .masses
                .as_ref()
                .ok_or_else(|| Error::Invalid("tuple mode expects masses".into()))?;
            if m.shape() != (batch.len(), self.config.mode.points()) {
                return Err(dim_err(
                    format!("{}x{}", batch.len(), self.config.mode.points()),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            map.insert("m".to_string(), m.clone());
        }
        Ok(map)
    }

    /// Forward pass on the tape (keeps intermediate values for backward).
    pub fn forward_batch(&mut self, batch: &Batch) -> Result<DenseMatrix> {
        let inputs = self.bindings(batch)?;
        self.tape.forward(&inputs)?;
        Ok(self.tape.value(self.output)?.clone())
    }

    /// Inference with null-cone checks against the frozen form.
    pub fn predict(&mut self, batch: &Batch) -> Result<DenseMatrix> {
        if let Some(f) = &self.frozen {
            let n = self.config.n;
            for row in 0..batch.len() {
                for p in 0..self.config.mode.points() {
                    let x = &batch.x.row_slice(row)[p * n..(p + 1) * n];
                    if f.is_near_null(x) {
                        let value = f.eval(x)?;
                        return Err(Error::NearNullCone {
                            value: value.abs(),
                            threshold: f.null_eps(x),
                        });
                    }
                }
            }
        }
        self.forward_batch(batch)
    }

    /// Single-sample convenience wrapper around [`GOrthoNet::predict`].
    pub fn forward(&mut self, x: &[f64], masses: Option<&[f64]>) -> Result<Vec<f64>> {
        let batch = Batch {
            x: DenseMatrix::new(1, x.len(), x.to_vec())?,
            masses: masses.map(|m| DenseMatrix::new(1, m.len(), m.to_vec())).transpose()?,
        };
        Ok(self.predict(&batch)?.into_vec())
    }

    /// φ_n input features of the last forward pass.
    pub fn last_features(&self) -> Result<DenseMatrix> {
        Ok(self.tape.value(self.features)?.clone())
    }

    /// Raw φ_n output of the last forward pass.
    pub fn last_phi_n(&self) -> Result<DenseMatrix> {
        Ok(self.tape.value(self.phi_n_out)?.clone())
    }

    /// Pseudonorms of each point from the last forward pass.
    pub fn last_radii(&self) -> Result<Vec<DenseMatrix>> {
        self.radii.iter().map(|&r| Ok(self.tape.value(r)?.clone())).collect()
    }

    /// Backpropagates `seed` (shaped like the output of the last forward).
    pub fn backward(&mut self, seed: &DenseMatrix) -> Result<()> {
        self.tape.backward(self.output, seed)
    }

    /// φ_s(x̂) as a certified group element of the current form: the
    /// product of the emitted A-Householder reflections.
    pub fn phi_s_forward(&mut self, x_hat: &[f64], masses: Option<&[f64]>) -> Result<GroupElement> {
        if self.config.action == Action::Invariant {
            return Err(Error::Invalid("invariant mode has no φ_s".into()));
        }
        let form = self.form()?;
        let first = &x_hat[..self.config.n.min(x_hat.len())];
        let q = form.eval(first)?;
        if (q.abs() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "x̂ is not A-normalized (|x̂ᵀAx̂| = {})",
                q.abs()
            )));
        }
        self.forward_batch(&Batch {
            x: DenseMatrix::new(1, x_hat.len(), x_hat.to_vec())?,
            masses: masses.map(|m| DenseMatrix::new(1, m.len(), m.to_vec())).transpose()?,
        })?;
        let mut g = DenseMatrix::identity(self.config.n);
        for &w in &self.directions {
            let w = self.tape.value(w)?.row_slice(0).to_vec();
            g = g.matmul(a_householder(&form, &w)?.matrix());
        }
        if self.directions.len() == 1 {
            return GroupElement::certify(&form, g, MEMBER_TOL);
        }
        GroupElement::certify_relative(&form, g, CLOSURE_TOL)
    }

    /// Reflection directions of the last forward pass, one B×n block each.
    pub fn last_directions(&self) -> Result<Vec<DenseMatrix>> {
        self.directions
            .iter()
            .map(|&w| Ok(self.tape.value(w)?.clone()))
            .collect()
    }

    /// Number of guarded entries hit in the last forward pass.
    pub fn guard_hits(&self) -> usize {
        self.tape.guard_hits()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tape
            .params()
            .iter()
            .map(|&(_, id)| self.tape.value(id).map(|v| v.as_slice().len()).unwrap_or(0))
            .sum()
    }

    /// Parameters flattened in declaration order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for &(_, id) in self.tape.params() {
            out.extend_from_slice(self.tape.value(id).expect("params have values").as_slice());
        }
        out
    }

    /// Overwrites every parameter from a flat vector in declaration order.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(dim_err(self.param_count(), flat.len()));
        }
        let mut offset = 0;
        let ids: Vec<NodeId> = self.tape.params().iter().map(|&(_, id)| id).collect();
        for id in ids {
            let (r, c) = self.tape.value(id)?.shape();
            let chunk = flat[offset..offset + r * c].to_vec();
            if let Some(k) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(offset + k));
            }
            self.tape.set_value(id, DenseMatrix::new(r, c, chunk)?)?;
            offset += r * c;
        }
        Ok(())
    }

    /// Gradients flattened in declaration order (after backward).
    pub fn grads_flat(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.param_count());
        for g in self.tape.param_grads()? {
            out.extend_from_slice(g.as_slice());
        }
        Ok(out)
    }

    /// Writes the parameter blob: magic, dimension header, f64 LE values.
    pub fn write_params<W: Write>(&self, mut w: W) -> Result<()> {
        let flat = self.params_flat();
        w.write_all(BLOB_MAGIC)?;
        w.write_all(&(self.config.n as u64).to_le_bytes())?;
        w.write_all(&(flat.len() as u64).to_le_bytes())?;
        for v in flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a blob written by [`GOrthoNet::write_params`] into this model.
    pub fn read_params<R: Read>(&mut self, mut r: R) -> Result<()> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(Error::Parse("bad parameter blob magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        if n != self.config.n || count != self.param_count() {
            return Err(dim_err(
                format!("n={} count={}", self.config.n, self.param_count()),
                format!("n={n} count={count}"),
            ));
        }
        let mut flat = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            flat.push(f64::from_le_bytes(word));
        }
        let mut tail = Vec::new();
        r.read_to_end(&mut tail)?;
        if !tail.is_empty() {
            return Err(Error::Parse(format!("{} trailing bytes in blob", tail.len())));
        }
        self.set_params_flat(&flat)
    }
}

fn build_learnable_form(t: &mut Tape, lf: &LearnableForm) -> (NodeId, FormNodes) {
    let n = lf.d_params.len();
    let v = t.param("form.v", lf.householder_vectors.clone());
    let d = t.param("form.d", DenseMatrix::from_raw(1, n, lf.d_params.clone()));
    let eye = t.constant(DenseMatrix::identity(n));
    let mut u = eye;
    for i in 0..n {
        let vi = t.slice(v, i, i + 1);
        let vt = t.transpose(vi);
        let outer = t.matmul(vi, vt);
        let len2 = t.matmul(vt, vi);
        let inv = t.reciprocal_guarded(len2, HOUSEHOLDER_GUARD, Guard::Zero);
        let scaled = t.mul(outer, inv);
        let scaled = t.scale(scaled, 2.0);
        let h = t.sub(eye, scaled);
        u = t.matmul(u, h);
    }
    let dmat = t.mul(eye, d);
    let du = t.matmul(dmat, u);
    let ut = t.transpose(u);
    let a = t.matmul(ut, du);
    (a, FormNodes::Learnable { v, d, u })
}

/// x / r with a clamped reciprocal.
fn normalize(t: &mut Tape, x: NodeId, r: NodeId) -> NodeId {
    let inv = t.reciprocal_guarded(r, TRAIN_CLAMP, Guard::Clamp);
    t.mul(x, inv)
}

/// Returns (Aw as rows, 2/(wᵀAw)) for a B×n block of directions.
fn householder_parts(t: &mut Tape, a: NodeId, w: NodeId) -> (NodeId, NodeId) {
    let aw = t.matmul(w, a);
    let prod = t.mul(aw, w);
    let s = t.sum(prod, Axis::Rows);
    let inv = t.reciprocal_guarded(s, TRAIN_CLAMP, Guard::Clamp);
    (aw, t.scale(inv, 2.0))
}

/// Row-wise R·y with R = I − c·w(Aw)ᵀ.
fn reflect_rows(t: &mut Tape, a: NodeId, w: NodeId, y: NodeId) -> NodeId {
    let (aw, c) = householder_parts(t, a, w);
    let proj = t.mul(aw, y);
    let proj = t.sum(proj, Axis::Rows);
    let coef = t.mul(proj, c);
    let delta = t.mul(w, coef);
    t.sub(y, delta)
}

/// Constant 0/1 matrices that move between n-vectors and flattened n×n
/// matrices.
struct Selectors {
    n: usize,
}

struct SelectorNodes {
    /// n × n²: row i → entries (i, ·).
    rep: NodeId,
    /// n × n²: column j → entries (·, j).
    tile: NodeId,
    /// n² × n: sums each row of the matrix.
    row_sum: NodeId,
    /// n² × n: sums each column of the matrix.
    col_sum: NodeId,
    /// n² × n²: flattened transpose.
    transpose_perm: NodeId,
}

impl Selectors {
    fn new(n: usize) -> Self {
        Self { n }
    }

    fn declare(&self, t: &mut Tape) -> SelectorNodes {
        let n = self.n;
        let nn = n * n;
        let mut rep = DenseMatrix::zeros(n, nn);
        let mut tile = DenseMatrix::zeros(n, nn);
        let mut perm = DenseMatrix::zeros(nn, nn);
        for i in 0..n {
            for j in 0..n {
                rep[(i, i * n + j)] = 1.0;
                tile[(j, i * n + j)] = 1.0;
                perm[(i * n + j, j * n + i)] = 1.0;
            }
        }
        let row_sum = rep.transpose();
        let col_sum = tile.transpose();
        SelectorNodes {
            rep: t.constant(rep),
            tile: t.constant(tile),
            row_sum: t.constant(row_sum),
            col_sum: t.constant(col_sum),
            transpose_perm: t.constant(perm),
        }
    }
}

/// Row-wise R·M·R for flattened M, with R = I − c·w(Aw)ᵀ.
fn conjugate_rows(t: &mut Tape, a: NodeId, w: NodeId, m: NodeId, s: &SelectorNodes) -> NodeId {
    let (aw, c) = householder_parts(t, a, w);
    let w_tile = t.matmul(w, s.tile);
    let aw_tile = t.matmul(aw, s.tile);
    let w_rep = t.matmul(w, s.rep);
    let aw_rep = t.matmul(aw, s.rep);

    // M·R = M − c·(Mw)(Aw)ᵀ
    let mw = t.mul(m, w_tile);
    let mw = t.matmul(mw, s.row_sum);
    let mw_rep = t.matmul(mw, s.rep);
    let outer = t.mul(mw_rep, aw_tile);
    let outer = t.mul(outer, c);
    let mr = t.sub(m, outer);

    // R·(MR) = MR − c·w((Aw)ᵀMR)
    let z = t.mul(mr, aw_rep);
    let z = t.matmul(z, s.col_sum);
    let z_tile = t.matmul(z, s.tile);
    let outer = t.mul(w_rep, z_tile);
    let outer = t.mul(outer, c);
    t.sub(mr, outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{is_member, sample_element};
    use crate::numerics::orthonormality_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn realize_identity_vectors() {
        let lf = LearnableForm {
            householder_vectors: DenseMatrix::identity(2),
            d_params: vec![1.0, 1.0],
        };
        let (u, a) = lf.realize();
        assert!(u.add(&DenseMatrix::identity(2)).max_abs() < 1e-15);
        assert!(a.sub(&DenseMatrix::identity(2)).max_abs() < 1e-15);

        let lf = LearnableForm {
            householder_vectors: DenseMatrix::identity(4),
            d_params: vec![1.0, -1.0, -1.0, -1.0],
        };
        let f = realize_form(&lf).unwrap();
        assert!(f.matrix().sub(QuadraticForm::minkowski().matrix()).max_abs() < 1e-15);
    }

    #[test]
    fn realize_random_is_orthogonal_and_symmetric() {
        let mut r = rng(3);
        for _ in 0..1000 {
            let n = r.random_range(1..=6);
            let lf = LearnableForm {
                householder_vectors: DenseMatrix::from_raw(
                    n,
                    n,
                    (0..n * n).map(|_| r.random_range(-2.0..2.0)).collect(),
                ),
                d_params: (0..n).map(|_| r.random_range(-2.0..2.0)).collect(),
            };
            let (u, a) = lf.realize();
            assert!(orthonormality_error(&u) <= 1e-10);
            assert_eq!(a.max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn zero_vector_factor_is_identity() {
        let mut v = DenseMatrix::identity(3);
        for j in 0..3 {
            v[(j, 1)] = 0.0;
        }
        let lf = LearnableForm {
            householder_vectors: v,
            d_params: vec![1.0, 2.0, 3.0],
        };
        let (u, _) = lf.realize();
        let want = DenseMatrix::from_diag(&[-1.0, 1.0, -1.0]);
        assert!(u.sub(&want).max_abs() < 1e-15);
    }

    #[test]
    fn taped_form_matches_direct_realization() {
        let mut r = rng(4);
        let lf = LearnableForm::init(4, &mut r);
        let mut net = GOrthoNet::new(
            NetConfig::new(4, Action::Invariant),
            FormSource::Learnable(lf.clone()),
            &mut r,
        )
        .unwrap();
        net.forward_batch(&Batch::single(row(&[1.0, 0.2, 0.3, 0.1]))).unwrap();
        let (u, a) = net.taped_form().unwrap();
        let (u2, a2) = lf.realize();
        assert!(u.sub(&u2).max_abs() < 1e-14);
        assert!(a.sub(&a2).max_abs() < 1e-14);
    }

    #[test]
    fn zero_phi_s_reflects_about_x_hat() {
        let mut r = rng(5);
        let eta = QuadraticForm::minkowski();
        let mut net = GOrthoNet::new(
            NetConfig::new(4, Action::Left),
            FormSource::Frozen(eta.clone()),
            &mut r,
        )
        .unwrap();
        net.phi_s().unwrap().clone().zero(net.tape_mut()).unwrap();
        let x_hat = eta.normalize(&[2.0, 0.5, 0.3, -0.4]).unwrap();
        let g = net.phi_s_forward(&x_hat, None).unwrap();
        let w: Vec<f64> = x_hat.iter().map(|v| SKIP * v).collect();
        let want = a_householder(&eta, &w).unwrap();
        assert!(g.matrix().sub(want.matrix()).max_abs() < 1e-12);
        // a reflection about x̂ sends x̂ to −x̂
        let img = g.apply(&x_hat);
        for (a, b) in img.iter().zip(&x_hat) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_s_emits_exact_members() {
        let mut r = rng(6);
        let forms = [
            QuadraticForm::identity(3),
            QuadraticForm::minkowski(),
            QuadraticForm::from_diag(&[1.0, 1.0, -1.0, -1.0]),
        ];
        for form in forms {
            let n = form.dim();
            for reflections in [1, 3] {
                let mut cfg = NetConfig::new(n, Action::Conjugation);
                cfg.reflections = reflections;
                let mut net =
                    GOrthoNet::new(cfg, FormSource::Frozen(form.clone()), &mut r).unwrap();
                for _ in 0..20 {
                    let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
                    let Ok(x_hat) = form.normalize(&x) else { continue };
                    let g = net.phi_s_forward(&x_hat, None).unwrap();
                    let (ok, res) = is_member(&form, g.matrix(), 1e-9).unwrap();
                    if reflections == 1 {
                        assert!(ok, "{res}");
                    }
                    if reflections == 1 && n == 3 {
                        assert!(g.matrix().max_asymmetry() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_phi_n_gives_identity_under_conjugation() {
        let mut r = rng(7);
        let form = QuadraticForm::from_diag(&[1.0, 1.0, -1.0, -1.0]);
        let mut net = GOrthoNet::new(
            NetConfig::new(4, Action::Conjugation),
            FormSource::Frozen(form.clone()),
            &mut r,
        )
        .unwrap();
        let phi_n = net.phi_n().clone();
        phi_n.zero(net.tape_mut()).unwrap();
        phi_n
            .set_output_bias(net.tape_mut(), DenseMatrix::identity(4).as_slice())
            .unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            if form.is_near_null(&x) {
                continue;
            }
            let out = net.forward(&x, None).unwrap();
            let err = DenseMatrix::new(4, 4, out)
                .unwrap()
                .sub(&DenseMatrix::identity(4))
                .max_abs();
            // R² = I holds to rounding times ‖R‖², and ‖R‖ grows like ‖x‖²/|q(x)|
            let cond = 1.0 + x.iter().map(|v| v * v).sum::<f64>() / form.eval(&x).unwrap().abs();
            assert!(err < 1e-13 * cond * cond, "{err}");
        }
    }

    #[test]
    fn conjugation_matches_explicit_matrices() {
        let mut r = rng(8);
        let form = QuadraticForm::from_diag(&[1.0, 1.0, -1.0, -1.0]);
        let mut cfg = NetConfig::new(4, Action::Conjugation);
        cfg.reflections = 2;
        let mut net = GOrthoNet::new(cfg, FormSource::Frozen(form.clone()), &mut r).unwrap();
        let x = [0.9, -1.2, 0.4, 0.3];
        let out = DenseMatrix::new(4, 4, net.forward(&x, None).unwrap()).unwrap();
        let dirs = net.last_directions().unwrap();
        let w1 = a_householder(&form, dirs[0].row_slice(0)).unwrap();
        let w2 = a_householder(&form, dirs[1].row_slice(0)).unwrap();
        let g = w1.compose(&w2).unwrap();
        let m = DenseMatrix::new(4, 4, net.last_phi_n().unwrap().into_vec()).unwrap();
        let want = g.matrix().matmul(&m).matmul(g.inverse().unwrap().matrix());
        assert!(want.sub(&out).max_abs() < 1e-10);
    }

    #[test]
    fn left_action_matches_explicit_reflection() {
        let mut r = rng(9);
        let form = QuadraticForm::minkowski();
        let mut net = GOrthoNet::new(
            NetConfig::new(4, Action::Left),
            FormSource::Frozen(form.clone()),
            &mut r,
        )
        .unwrap();
        let phi_n = net.phi_n().clone();
        phi_n.zero(net.tape_mut()).unwrap();
        let y = [0.3, -0.7, 1.1, 0.2];
        phi_n.set_output_bias(net.tape_mut(), &y).unwrap();
        let x = [2.0, 0.1, -0.3, 0.5];
        let out = net.forward(&x, None).unwrap();
        let w = net.last_directions().unwrap()[0].row_slice(0).to_vec();
        let want = a_householder(&form, &w).unwrap().apply(&y);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_mode_is_exactly_invariant() {
        let mut r = rng(10);
        let eta = QuadraticForm::minkowski();
        let mut cfg = NetConfig::new(4, Action::Invariant);
        cfg.out_dim = 3;
        let mut net = GOrthoNet::new(cfg, FormSource::Frozen(eta.clone()), &mut r).unwrap();
        assert!(net.phi_s().is_none());
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            if eta.eval(&x).unwrap().abs() < 0.1 {
                continue;
            }
            let g = sample_element(&eta, &mut r, 0.5).unwrap();
            let a = net.forward(&x, None).unwrap();
            let b = net.forward(&g.apply(&x), None).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() <= 1e-8, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn tuple_gram_features() {
        let mut r = rng(11);
        let mut cfg = NetConfig::new(4, Action::Invariant);
        cfg.mode = InputMode::Tuple { points: 2, masses: false };
        let mut net =
            GOrthoNet::new(cfg, FormSource::Frozen(QuadraticForm::minkowski()), &mut r).unwrap();
        net.forward(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], None)
            .unwrap();
        assert_eq!(net.last_features().unwrap().as_slice(), &[1.0, 0.0, -1.0]);

        let mut cfg = NetConfig::new(3, Action::Conjugation);
        cfg.mode = InputMode::Tuple { points: 2, masses: true };
        let mut net =
            GOrthoNet::new(cfg, FormSource::Frozen(QuadraticForm::identity(3)), &mut r).unwrap();
        net.forward(&[1.0, 2.0, 0.0, 0.0, 1.0, 1.0], Some(&[0.5, 1.5]))
            .unwrap();
        assert_eq!(
            net.last_features().unwrap().as_slice(),
            &[5.0, 2.0, 2.0, 0.5, 1.5]
        );
        assert!(net.forward(&[1.0, 2.0, 0.0, 0.0, 1.0, 1.0], None).is_err());
    }

    #[test]
    fn null_input_rejected_for_frozen_form() {
        let mut r = rng(12);
        let mut net = GOrthoNet::new(
            NetConfig::new(4, Action::Invariant),
            FormSource::Frozen(QuadraticForm::minkowski()),
            &mut r,
        )
        .unwrap();
        assert!(matches!(
            net.forward(&[1.0, 1.0, 0.0, 0.0], None),
            Err(Error::NearNullCone { .. })
        ));
    }

    #[test]
    fn blob_round_trip() {
        let mut r = rng(13);
        let cfg = NetConfig::new(3, Action::Left);
        let mut a = GOrthoNet::new(
            cfg.clone(),
            FormSource::Learnable(LearnableForm::init(3, &mut r)),
            &mut r,
        )
        .unwrap();
        let mut b = GOrthoNet::new(
            cfg,
            FormSource::Learnable(LearnableForm::init(3, &mut r)),
            &mut r,
        )
        .unwrap();
        let mut buf = Vec::new();
        a.write_params(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GON1");
        assert_eq!(buf.len(), 4 + 16 + 8 * a.param_count());
        b.read_params(buf.as_slice()).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        let x = [0.5, -1.0, 2.0];
        assert_eq!(a.forward(&x, None).unwrap(), b.forward(&x, None).unwrap());
        assert!(b.read_params(&buf[..buf.len() - 8]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(b.read_params(bad.as_slice()).is_err());
    }

    #[test]
    fn config_validation() {
        let mut r = rng(14);
        let mut cfg = NetConfig::new(3, Action::Left);
        cfg.reflections = 0;
        assert!(GOrthoNet::new(cfg, FormSource::Frozen(QuadraticForm::identity(3)), &mut r).is_err());
        let cfg = NetConfig::new(3, Action::Left);
        assert!(GOrthoNet::new(cfg, FormSource::Frozen(QuadraticForm::identity(2)), &mut r).is_err());
    }
}
