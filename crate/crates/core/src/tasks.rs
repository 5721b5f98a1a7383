//! Data generators for the three experiments and the dataset text format.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::group::sample_element;
use crate::model::{Action, Batch};
use crate::numerics::DenseMatrix;
use crate::quadform::{matrix_from_csv, matrix_to_csv, QuadraticForm};

/// Samples with |xᵀA₀x| below this are redrawn.
pub const NULL_MARGIN: f64 = 0.1;

/// Median of xᵀηx for x ~ N(0, I₄) after null rejection.
pub const LORENTZ_THRESHOLD: f64 = -1.6808;

/// Scale of the Lie-algebra draw used by [`augment_with_group`].
pub const AUGMENT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SyntheticO22,
    Inertia,
    LorentzCls,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::SyntheticO22 => "synthetic_o22",
            TaskKind::Inertia => "inertia",
            TaskKind::LorentzCls => "lorentz_cls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic_o22" => Ok(TaskKind::SyntheticO22),
            "inertia" => Ok(TaskKind::Inertia),
            "lorentz_cls" => Ok(TaskKind::LorentzCls),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Inputs, targets and the ground-truth symmetry of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N × (points·n), points stacked left to right.
    pub inputs: DenseMatrix,
    /// N × points for tasks with per-point masses.
    pub masses: Option<DenseMatrix>,
    /// N × m; conjugation targets are n×n flattened row-major.
    pub targets: DenseMatrix,
    pub true_form: QuadraticForm,
    pub action: Action,
    pub points: usize,
    /// Targets are 0/1 labels.
    pub classification: bool,
    /// Factor the targets were divided by (1 for raw data).
    pub target_scale: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.true_form.dim()
    }

    pub fn target_width(&self) -> usize {
        self.targets.cols()
    }

    /// Point `p` of sample `i`.
    pub fn point(&self, i: usize, p: usize) -> &[f64] {
        let n = self.n();
        &self.inputs.row_slice(i)[p * n..(p + 1) * n]
    }

    /// Rows `indices` as a model batch plus matching targets.
    pub fn batch(&self, indices: &[usize]) -> (Batch, DenseMatrix) {
        let x = self.inputs.select(indices, &(0..self.inputs.cols()).collect::<Vec<_>>());
        let masses = self
            .masses
            .as_ref()
            .map(|m| m.select(indices, &(0..m.cols()).collect::<Vec<_>>()));
        let y = self.targets.select(indices, &(0..self.targets.cols()).collect::<Vec<_>>());
        (Batch { x, masses }, y)
    }

    pub fn all(&self) -> (Batch, DenseMatrix) {
        (
            Batch {
                x: self.inputs.clone(),
                masses: self.masses.clone(),
            },
            self.targets.clone(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (b, y) = self.batch(indices);
        Dataset {
            inputs: b.x,
            masses: b.masses,
            targets: y,
            ..self.clone()
        }
    }

    /// Root mean square of all target entries.
    pub fn target_rms(&self) -> f64 {
        let t = self.targets.as_slice();
        (t.iter().map(|v| v * v).sum::<f64>() / t.len().max(1) as f64).sqrt()
    }

    /// Divides regression targets by `scale`; classification data is
    /// returned unchanged.
    pub fn rescaled(&self, scale: f64) -> Result<Dataset> {
        if self.classification {
            return Ok(self.clone());
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Invalid(format!("target scale {scale} must be positive")));
        }
        Ok(Dataset {
            targets: self.targets.scale(1.0 / scale),
            target_scale: self.target_scale * scale,
            ..self.clone()
        })
    }

    /// Regression targets divided by their own RMS.
    pub fn normalized(&self) -> Result<Dataset> {
        self.rescaled(self.target_rms())
    }

    /// Sidecar header: dimensions, action and the gauged true form.
    pub fn header(&self) -> Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "n={}", self.n());
        let _ = writeln!(s, "p={}", self.points);
        let _ = writeln!(s, "action={}", self.action);
        let _ = writeln!(s, "masses={}", self.masses.is_some());
        let _ = writeln!(s, "classification={}", self.classification);
        let _ = writeln!(s, "target_scale={:?}", self.target_scale);
        let _ = writeln!(s, "form:");
        s.push_str(&matrix_to_csv(self.true_form.canonical_gauge()?.matrix()));
        Ok(s)
    }

    /// One sample per line: inputs (then masses), `|`, targets.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            let mut fields: Vec<String> =
                self.inputs.row_slice(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(m) = &self.masses {
                fields.extend(m.row_slice(i).iter().map(|v| format!("{v:?}")));
            }
            fields.push("|".into());
            fields.extend(self.targets.row_slice(i).iter().map(|v| format!("{v:?}")));
            s.push_str(&fields.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`Dataset::header`] and [`Dataset::to_text`].
    ///
    /// The header carries the gauged form, so the result's `true_form` is
    /// the gauged representative.
    pub fn from_text(header: &str, body: &str) -> Result<Dataset> {
        let mut n = None;
        let mut points = None;
        let mut action = None;
        let mut masses = false;
        let mut classification = false;
        let mut target_scale = 1.0;
        let mut lines = header.lines();
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "form:" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
            let bad = |_| Error::Parse(format!("bad value for `{k}`"));
            match k.trim() {
                "n" => n = Some(v.trim().parse::<usize>().map_err(bad)?),
                "p" => points = Some(v.trim().parse::<usize>().map_err(bad)?),
                "action" => {
                    action = Some(match v.trim() {
                        "invariant" => Action::Invariant,
                        "left" => Action::Left,
                        "conjugation" => Action::Conjugation,
                        o => return Err(Error::Parse(format!("unknown action `{o}`"))),
                    })
                }
                "masses" => masses = v.trim() == "true",
                "classification" => classification = v.trim() == "true",
                "target_scale" => {
                    target_scale = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse("bad target_scale".into()))?
                }
                other => return Err(Error::Parse(format!("unknown header key `{other}`"))),
            }
        }
        let form_text: Vec<&str> = lines.collect();
        let form = QuadraticForm::symmetrize(&matrix_from_csv(&form_text.join("\n"))?)?;
        let n = n.ok_or_else(|| Error::Parse("header lacks n".into()))?;
        let points = points.ok_or_else(|| Error::Parse("header lacks p".into()))?;
        let action = action.ok_or_else(|| Error::Parse("header lacks action".into()))?;
        if form.dim() != n {
            return Err(dim_err(n, form.dim()));
        }

        let width = n * points + if masses { points } else { 0 };
        let mut xs = Vec::new();
        let mut ms = Vec::new();
        let mut ys = Vec::new();
        let mut m_width = None;
        let mut rows = 0;
        for (lineno, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (lhs, rhs) = line
                .split_once('|')
                .ok_or_else(|| Error::Parse(format!("line {}: missing `|`", lineno + 1)))?;
            let parse = |s: &str| -> Result<Vec<f64>> {
                s.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("line {}: bad number `{t}`", lineno + 1)))
                    })
                    .collect()
            };
            let lhs = parse(lhs)?;
            let rhs = parse(rhs)?;
            if lhs.len() != width {
                return Err(dim_err(width, lhs.len()));
            }
            if *m_width.get_or_insert(rhs.len()) != rhs.len() {
                return Err(Error::Parse(format!("line {}: ragged targets", lineno + 1)));
            }
            xs.extend_from_slice(&lhs[..n * points]);
            ms.extend_from_slice(&lhs[n * points..]);
            ys.extend(rhs);
            rows += 1;
        }
        let m = m_width.unwrap_or(0);
        Ok(Dataset {
            inputs: DenseMatrix::new(rows, n * points, xs)?,
            masses: if masses {
                Some(DenseMatrix::new(rows, points, ms)?)
            } else {
                None
            },
            targets: DenseMatrix::new(rows, m, ys)?,
            true_form: form,
            action,
            points,
            classification,
            target_scale,
        })
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws x ~ N(0, I) until |xᵀAx| ≥ [`NULL_MARGIN`].
fn non_null_gaussian<R: Rng + ?Sized>(form: &QuadraticForm, rng: &mut R) -> Result<Vec<f64>> {
    loop {
        let x = gaussian(rng, form.dim());
        if form.eval(&x)?.abs() >= NULL_MARGIN {
            return Ok(x);
        }
    }
}

/// Haar-random orthogonal matrix (Gram–Schmidt on a Gaussian matrix with
/// sign correction).
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseMatrix {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v = gaussian(rng, n);
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= d * b;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
        if ok {
            return DenseMatrix::from_columns(&cols, n);
        }
    }
}

/// (9q + 2)·x(Ax)ᵀ with q = xᵀAx, the expansion of 9(xxᵀAxxᵀA) + 2(xxᵀA).
pub fn synthetic_target(a: &DenseMatrix, x: &[f64]) -> DenseMatrix {
    let ax = a.matvec(x);
    let q: f64 = x.iter().zip(&ax).map(|(p, r)| p * r).sum();
    let k = 9.0 * q + 2.0;
    let n = x.len();
    DenseMatrix::from_raw(
        n,
        n,
        (0..n * n).map(|i| k * x[i / n] * ax[i % n]).collect(),
    )
}

/// Σ m_i(‖x_i‖²I − x_i x_iᵀ).
pub fn inertia_target(points: &[Vec<f64>], masses: &[f64]) -> DenseMatrix {
    let n = points.first().map_or(3, Vec::len);
    let mut t = DenseMatrix::zeros(n, n);
    for (x, &m) in points.iter().zip(masses) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { r2 } else { 0.0 };
                t[(i, j)] += m * (delta - x[i] * x[j]);
            }
        }
    }
    t
}

/// 1 when xᵀηx exceeds [`LORENTZ_THRESHOLD`].
pub fn lorentz_label(x: &[f64]) -> f64 {
    let q = x[0] * x[0] - x[1..].iter().map(|v| v * v).sum::<f64>();
    f64::from(u8::from(q > LORENTZ_THRESHOLD))
}

/// Task 1: conjugation-equivariant regression under a hidden O(2,2) form.
pub fn gen_synthetic_o22<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let q = random_rotation(4, rng);
    let a0 = q
        .transpose()
        .matmul(&DenseMatrix::from_diag(&[1.0, 1.0, -1.0, -1.0]))
        .matmul(&q);
    let form = QuadraticForm::symmetrize(&a0)?;
    gen_synthetic_with_form(&form, n_samples, rng)
}

/// Task 1 data under a given form.
pub fn gen_synthetic_with_form<R: Rng + ?Sized>(
    form: &QuadraticForm,
    n_samples: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let n = form.dim();
    let mut xs = Vec::with_capacity(n_samples * n);
    let mut ys = Vec::with_capacity(n_samples * n * n);
    for _ in 0..n_samples {
        let x = non_null_gaussian(form, rng)?;
        ys.extend_from_slice(synthetic_target(form.matrix(), &x).as_slice());
        xs.extend(x);
    }
    Ok(Dataset {
        inputs: DenseMatrix::new(n_samples, n, xs)?,
        masses: None,
        targets: DenseMatrix::new(n_samples, n * n, ys)?,
        true_form: form.clone(),
        action: Action::Conjugation,
        points: 1,
        classification: false,
        target_scale: 1.0,
    })
}

/// Task 2: inertia tensors of `n_points` point masses in ℝ³.
pub fn gen_inertia<R: Rng + ?Sized>(n_points: usize, n_samples: usize, rng: &mut R) -> Result<Dataset> {
    if n_points == 0 {
        return Err(Error::Invalid("n_points must be positive".into()));
    }
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let form = QuadraticForm::identity(3);
    let mut xs = Vec::with_capacity(n_samples * n_points * 3);
    let mut ms = Vec::with_capacity(n_samples * n_points);
    let mut ys = Vec::with_capacity(n_samples * 9);
    for _ in 0..n_samples {
        let pts: Vec<Vec<f64>> = (0..n_points)
            .map(|_| non_null_gaussian(&form, rng))
            .collect::<Result<_>>()?;
        let masses: Vec<f64> = (0..n_points).map(|_| rng.random_range(0.1..2.0)).collect();
        ys.extend_from_slice(inertia_target(&pts, &masses).as_slice());
        xs.extend(pts.into_iter().flatten());
        ms.extend(masses);
    }
    Ok(Dataset {
        inputs: DenseMatrix::new(n_samples, n_points * 3, xs)?,
        masses: Some(DenseMatrix::new(n_samples, n_points, ms)?),
        targets: DenseMatrix::new(n_samples, 9, ys)?,
        true_form: form,
        action: Action::Conjugation,
        points: n_points,
        classification: false,
        target_scale: 1.0,
    })
}

/// Task 3 stand-in: binary labels depending only on the Minkowski norm.
pub fn gen_lorentz_cls<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let form = QuadraticForm::minkowski();
    let mut xs = Vec::with_capacity(n_samples * 4);
    let mut ys = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = non_null_gaussian(&form, rng)?;
        ys.push(lorentz_label(&x));
        xs.extend(x);
    }
    Ok(Dataset {
        inputs: DenseMatrix::new(n_samples, 4, xs)?,
        masses: None,
        targets: DenseMatrix::new(n_samples, 1, ys)?,
        true_form: form,
        action: Action::Invariant,
        points: 1,
        classification: true,
        target_scale: 1.0,
    })
}

/// Applies g to one flattened target according to the action.
pub fn act_on_target(action: Action, g: &DenseMatrix, g_inv: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let n = g.rows();
    match action {
        Action::Invariant => y.to_vec(),
        Action::Left => g.matvec(y),
        Action::Conjugation => {
            let m = DenseMatrix::from_raw(n, n, y.to_vec());
            g.matmul(&m).matmul(g_inv).into_vec()
        }
    }
}

/// Appends `k` group-transformed copies of every sample.
pub fn augment_with_group<R: Rng + ?Sized>(ds: &Dataset, rng: &mut R, k: usize) -> Result<Dataset> {
    if !ds.true_form.is_invertible() {
        return Err(Error::SingularForm);
    }
    let n = ds.n();
    let mut out = ds.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut xs = ds.inputs.as_slice().to_vec();
    let mut ys = ds.targets.as_slice().to_vec();
    let mut ms = ds.masses.as_ref().map(|m| m.as_slice().to_vec());
    for _ in 0..k {
        for i in 0..ds.len() {
            let g = sample_element(&ds.true_form, rng, AUGMENT_SCALE)?;
            let g_inv = g.inverse()?;
            for p in 0..ds.points {
                xs.extend(g.apply(ds.point(i, p)));
            }
            ys.extend(act_on_target(ds.action, g.matrix(), g_inv.matrix(), ds.targets.row_slice(i)));
            if let (Some(ms), Some(m)) = (ms.as_mut(), ds.masses.as_ref()) {
                ms.extend_from_slice(m.row_slice(i));
            }
        }
    }
    let rows = ds.len() * (k + 1);
    out.inputs = DenseMatrix::new(rows, n * ds.points, xs)?;
    out.targets = DenseMatrix::new(rows, ds.target_width(), ys)?;
    out.masses = ms.map(|m| DenseMatrix::new(rows, ds.points, m)).transpose()?;
    Ok(out)
}
