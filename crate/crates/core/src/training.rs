//! Losses, the Adam optimizer, label noise and the minibatch training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{dim_err, Error, Result};
use crate::group::sample_element;
use crate::metrics::gauged_cos;
use crate::model::{Action, Batch, GOrthoNet};
use crate::numerics::DenseMatrix;
use crate::quadform::QuadraticForm;
use crate::tasks::{act_on_target, Dataset};

/// Whether the quadratic form is fixed to the truth or learnt jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormMode {
    Frozen,
    Learnable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Std dev of Gaussian noise added to training targets.
    pub noise_sigma: f64,
    /// Weight of the φ_s equivariance penalty (0 disables it).
    pub regularizer_weight: f64,
    /// Fraction of the data held out for validation.
    pub val_fraction: f64,
    /// Global gradient-norm ceiling applied before each step (0 disables it).
    pub grad_clip: f64,
    /// Restore the parameters of the epoch with the lowest validation loss
    /// when training ends.
    pub keep_best: bool,
    pub lr_schedule: LrSchedule,
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            noise_sigma: 0.0,
            regularizer_weight: 0.0,
            val_fraction: 0.1,
            grad_clip: 1.0,
            keep_best: false,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.regularizer_weight >= 0.0 && self.regularizer_weight.is_finite()) {
            return Err(Error::Config("regularizer_weight must be non-negative".into()));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Gauged cos(A₀, A) per epoch when the true form is known.
    pub cos: Vec<Option<f64>>,
    /// Loss of the untrained model on the training split.
    pub initial_train_loss: f64,
    /// Guarded-op hits summed over the run.
    pub guard_hits: usize,
    /// Epoch whose parameters were restored (`keep_best`).
    pub best_epoch: Option<usize>,
}

/// Mean of squared entry differences.
pub fn loss_mse(pred: &DenseMatrix, target: &DenseMatrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(dim_err(
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = pred.as_slice().len().max(1) as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n)
}

/// Binary cross-entropy of sigmoid(logit) against a 0/1 label.
pub fn loss_bce(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(dim_err(params.len(), grads.len()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Adds independent N(0, σ²) noise to every regression target.
pub fn inject_label_noise<R: Rng + ?Sized>(ds: &Dataset, sigma: f64, rng: &mut R) -> Result<Dataset> {
    if ds.classification {
        return Err(Error::Invalid("label noise applies to regression targets only".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("noise sigma {sigma} must be non-negative")));
    }
    if sigma == 0.0 {
        return Ok(ds.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid std dev");
    let mut out = ds.clone();
    for v in out.targets.as_mut_slice() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Deterministic train/validation split.
pub fn split(ds: &Dataset, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Dataset, Dataset) {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    let n_val = ((ds.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(ds.len().saturating_sub(1));
    let (val, train) = idx.split_at(n_val);
    (ds.subset(train), ds.subset(val))
}

/// Loss of predictions and its gradient with respect to them.
fn loss_and_seed(pred: &DenseMatrix, y: &DenseMatrix, classification: bool) -> Result<(f64, DenseMatrix)> {
    if pred.shape() != y.shape() {
        return Err(dim_err(format!("{:?}", y.shape()), format!("{:?}", pred.shape())));
    }
    let count = pred.as_slice().len().max(1) as f64;
    if classification {
        let loss = pred
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&z, &l)| loss_bce(z, l))
            .sum::<f64>()
            / count;
        let seed = pred.zip_map(y, |z, l| (sigmoid(z) - l) / count);
        Ok((loss, seed))
    } else {
        let loss = loss_mse(pred, y)?;
        let seed = pred.zip_map(y, |p, t| 2.0 * (p - t) / count);
        Ok((loss, seed))
    }
}

// Split and noise exactly as `train` sees them; the rng continues into the shuffles.
fn prepare(data: &Dataset, cfg: &TrainConfig) -> Result<(ChaCha8Rng, Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_set, val_set) = split(data, cfg.val_fraction, &mut rng);
    let train_set = if cfg.noise_sigma > 0.0 {
        inject_label_noise(&train_set, cfg.noise_sigma, &mut rng)?
    } else {
        train_set
    };
    Ok((rng, train_set, val_set))
}

/// The (possibly noisy) training split that `train` fits for this config.
pub fn training_split(data: &Dataset, cfg: &TrainConfig) -> Result<Dataset> {
    Ok(prepare(data, cfg)?.1)
}

/// Median over samples of the per-sample loss. Unlike the mean it ignores
/// the rare huge errors near the null cone of a half-learnt form.
pub fn median_sample_loss(model: &mut GOrthoNet, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let (b, y) = ds.all();
    let pred = model.forward_batch(&b)?;
    let width = pred.cols().max(1);
    let mut losses: Vec<f64> = pred
        .as_slice()
        .chunks(width)
        .zip(y.as_slice().chunks(width))
        .map(|(p, t)| {
            let s: f64 = if ds.classification {
                p.iter().zip(t).map(|(&z, &l)| loss_bce(z, l)).sum()
            } else {
                p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            s / width as f64
        })
        .collect();
    if losses.iter().any(|l| l.is_nan()) {
        return Ok(f64::NAN);
    }
    losses.sort_by(|a, b| a.total_cmp(b));
    let m = losses.len() / 2;
    Ok(if losses.len() % 2 == 1 {
        losses[m]
    } else {
        0.5 * (losses[m - 1] + losses[m])
    })
}

/// Mean loss of the model over a dataset, evaluated in chunks.
pub fn evaluate(model: &mut GOrthoNet, ds: &Dataset, chunk: usize) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (b, y) = ds.batch(part);
        let pred = model.forward_batch(&b)?;
        let (loss, _) = loss_and_seed(&pred, &y, ds.classification)?;
        total += loss * part.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Fraction of correctly classified samples (logit > 0 ⇔ label 1).
pub fn accuracy(model: &mut GOrthoNet, ds: &Dataset) -> Result<f64> {
    let (b, y) = ds.all();
    let pred = model.forward_batch(&b)?;
    let hits = pred
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .filter(|(&z, &l)| (z > 0.0) == (l > 0.5))
        .count();
    Ok(hits as f64 / ds.len().max(1) as f64)
}

/// Gradient of the equivariance penalty λ·mean‖f̂(gx) − ρ(g)f̂(x)‖² with g
/// drawn from the current form's group and held constant.
fn regularizer_grads(
    model: &mut GOrthoNet,
    batch: &Batch,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let form = model.form()?;
    let n = form.dim();
    let points = model.config().mode.points();
    let action = model.config().action;
    let g = sample_element(&form, rng, 0.5)?;
    let g_inv = g.inverse()?;
    let mut moved = batch.x.clone();
    for i in 0..batch.len() {
        for p in 0..points {
            let y = g.apply(&batch.x.row_slice(i)[p * n..(p + 1) * n]);
            moved.as_mut_slice()[i * n * points + p * n..][..n].copy_from_slice(&y);
        }
    }
    let base = model.forward_batch(batch)?;
    let want = DenseMatrix::from_rows(
        &(0..base.rows())
            .map(|i| act_on_target(action, g.matrix(), g_inv.matrix(), base.row_slice(i)))
            .collect::<Vec<_>>(),
    )?;
    let shifted = model.forward_batch(&Batch {
        x: moved,
        masses: batch.masses.clone(),
    })?;
    let count = shifted.as_slice().len().max(1) as f64;
    let diff = shifted.sub(&want).scale(2.0 * weight / count);
    model.backward(&diff)?;
    let mut grads = model.grads_flat()?;
    // adjoint of ρ(g) on the base prediction
    let back = DenseMatrix::from_rows(
        &(0..diff.rows())
            .map(|i| {
                let d = diff.row_slice(i);
                match action {
                    Action::Invariant => d.to_vec(),
                    Action::Left => g.matrix().transpose().matvec(d),
                    Action::Conjugation => {
                        let dm = DenseMatrix::from_raw(n, n, d.to_vec());
                        g.matrix()
                            .transpose()
                            .matmul(&dm)
                            .matmul(&g_inv.matrix().transpose())
                            .into_vec()
                    }
                }
            })
            .collect::<Vec<_>>(),
    )?;
    model.forward_batch(batch)?;
    model.backward(&back.scale(-1.0))?;
    for (a, b) in grads.iter_mut().zip(model.grads_flat()?) {
        *a += b;
    }
    Ok(grads)
}

/// Trains `model` on `data` (split 90/10 by default) and returns the
/// per-epoch history. `true_form`, when given, is tracked through the
/// gauged cosine.
pub fn train(
    model: &mut GOrthoNet,
    data: &Dataset,
    cfg: &TrainConfig,
    true_form: Option<&QuadraticForm>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    if data.target_width() != model.config().output_width() {
        return Err(dim_err(model.config().output_width(), data.target_width()));
    }
    let (mut rng, train_set, val_set) = prepare(data, cfg)?;

    let mut history = TrainHistory {
        initial_train_loss: evaluate(model, &train_set, 1024)?,
        ..Default::default()
    };
    let mut params = model.params_flat();
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let learnable = model.is_learnable();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    let mut step_cfg = cfg.clone();
    for epoch in 0..cfg.epochs {
        step_cfg.learning_rate = cfg.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut guard_fired = false;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, y) = train_set.batch(chunk);
            let pred = model.forward_batch(&batch)?;
            let hits = model.guard_hits();
            guard_fired |= hits > 0;
            history.guard_hits += hits;
            let (loss, seed) = loss_and_seed(&pred, &y, train_set.classification)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, guard_fired });
            }
            model.backward(&seed)?;
            let mut grads = model.grads_flat()?;
            if cfg.regularizer_weight > 0.0 && model.config().action != Action::Invariant {
                let extra = regularizer_grads(model, &batch, cfg.regularizer_weight, &mut rng)?;
                for (a, b) in grads.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss { epoch, guard_fired });
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let k = cfg.grad_clip / norm;
                    grads.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam_step(&mut params, &grads, &mut state, &step_cfg)?;
            model.set_params_flat(&params)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        let val = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(model, &val_set, 1024)?
        };
        history.val_loss.push(val);
        if cfg.keep_best && val.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, epoch, params.clone()));
        }
        history.cos.push(match (true_form, learnable) {
            (Some(f), true) => model.form().ok().and_then(|a| gauged_cos(f, &a).ok()),
            (Some(_), false) => Some(1.0),
            _ => None,
        });
    }
    if let Some((_, epoch, p)) = best {
        model.set_params_flat(&p)?;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}
