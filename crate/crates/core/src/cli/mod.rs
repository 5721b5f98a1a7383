//! Config-driven experiment runner, the `verify` property suites and the
//! `align` tool.

pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::canonical_align;
use crate::metrics::{
    cos_similarity, equivariance_error, form_projection_distance, gauged_cos, metrics_csv, MetricRow,
};
use crate::model::{
    Action, Activation, FormInit, FormSource, GOrthoNet, InputMode, LearnableForm, NetConfig, PhiSInput,
};
use crate::numerics::DenseMatrix;
use crate::quadform::{matrix_to_csv, vector_from_csv, QuadraticForm};
use crate::tasks::{gen_inertia, gen_lorentz_cls, gen_synthetic_o22, gen_synthetic_with_form, Dataset, TaskKind};
use crate::training::{
    accuracy, evaluate, median_sample_loss, train, training_split, FormMode, TrainConfig, TrainHistory,
};

/// Environment variable that overrides `train.seed`.
pub const SEED_ENV: &str = "GORTHO_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NAN: i32 = 3;
pub const EXIT_NULL: i32 = 4;

/// Maps an error onto the frozen exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NanLoss { .. } => EXIT_NAN,
        Error::NearNullCone { .. } | Error::NearNullDirection { .. } => EXIT_NULL,
        _ => EXIT_FAILURE,
    }
}

/// Network shape options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// A-Householder factors composed into φ_s.
    pub reflections: usize,
    pub phi_s_input: PhiSInput,
    /// Symmetrize φ_n's matrix before conjugating; defaults to true for
    /// the (symmetric) inertia targets.
    pub symmetric: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            reflections: 1,
            phi_s_input: PhiSInput::First,
            symmetric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub form_mode: FormMode,
    /// Starting point of a learnable form.
    pub form_init: FormInit,
    /// Learnable-form starts tried; the one with the lowest median
    /// per-sample training loss after `restart_epochs` is kept.
    pub form_restarts: usize,
    pub restart_epochs: usize,
    pub n_samples: usize,
    /// Size of the held-out test set drawn from the same distribution.
    pub n_test: usize,
    /// Bodies per sample (inertia task).
    pub n_points: usize,
    pub output_dir: PathBuf,
    /// Label-noise sweep; each level gets its own run in `sigma_<value>/`.
    /// Empty means a single run at `train.noise_sigma`.
    pub noise_sigmas: Vec<f64>,
    /// Also write the generated training set in the dataset text format.
    pub save_dataset: bool,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::SyntheticO22,
            form_mode: FormMode::Learnable,
            form_init: FormInit::Random,
            form_restarts: 1,
            restart_epochs: 0,
            n_samples: 8000,
            n_test: 1000,
            n_points: 5,
            output_dir: PathBuf::from("runs/default"),
            noise_sigmas: Vec::new(),
            save_dataset: false,
            model: ModelSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be positive".into()));
        }
        if self.task == TaskKind::Inertia && self.n_points < 2 {
            return Err(Error::Config("inertia needs at least 2 points".into()));
        }
        if self.form_restarts == 0 {
            return Err(Error::Config("form_restarts must be positive".into()));
        }
        if self.form_restarts > 1 && (self.restart_epochs == 0 || self.restart_epochs > self.train.epochs) {
            return Err(Error::Config(
                "restart_epochs must be in 1..=train.epochs when form_restarts > 1".into(),
            ));
        }
        if self.model.reflections == 0 {
            return Err(Error::Config("model.reflections must be positive".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        if let Some(s) = self.noise_sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("noise sigma {s} must be non-negative")));
        }
        if self.task == TaskKind::LorentzCls
            && (self.train.noise_sigma > 0.0 || self.noise_sigmas.iter().any(|&s| s > 0.0))
        {
            return Err(Error::Config("label noise applies to regression tasks only".into()));
        }
        Ok(())
    }

    /// Applies `GORTHO_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}={v}: {e}")))?;
        }
        Ok(self)
    }

    /// Network configuration implied by the task and model section.
    pub fn net_config(&self) -> NetConfig {
        let (n, action) = match self.task {
            TaskKind::SyntheticO22 => (4, Action::Conjugation),
            TaskKind::Inertia => (3, Action::Conjugation),
            TaskKind::LorentzCls => (4, Action::Invariant),
        };
        let mut cfg = NetConfig::new(n, action);
        cfg.hidden = self.model.hidden.clone();
        cfg.activation = self.model.activation;
        cfg.reflections = self.model.reflections;
        cfg.phi_s_input = self.model.phi_s_input;
        cfg.symmetric = self.model.symmetric.unwrap_or(self.task == TaskKind::Inertia);
        if self.task == TaskKind::Inertia {
            cfg.mode = InputMode::Tuple {
                points: self.n_points,
                masses: true,
            };
        }
        cfg
    }

    /// The per-level configs of a noise sweep (or just `self`).
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        if self.noise_sigmas.is_empty() {
            return vec![self.clone()];
        }
        self.noise_sigmas
            .iter()
            .map(|&s| {
                let mut c = self.clone();
                c.noise_sigmas.clear();
                c.train.noise_sigma = s;
                c.output_dir = self.output_dir.join(format!("sigma_{s}"));
                c
            })
            .collect()
    }
}

/// Everything a run measured; reproducible from `config` alone apart from
/// `wall_clock_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// `ok` or `nan`.
    pub status: String,
    pub diagnostic: Option<String>,
    pub config: ExperimentConfig,
    pub action: Action,
    pub target_scale: f64,
    pub param_count: usize,
    /// Test MSE on unit-normalized targets, or test BCE for classification.
    pub test_error: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub cos_raw: Option<f64>,
    pub cos: Option<f64>,
    pub abs_cos: Option<f64>,
    pub d_pa: Option<f64>,
    pub equivariance_error: Option<f64>,
    pub equivariance_error_untrained: Option<f64>,
    /// Reason for every metric reported as undefined.
    pub undefined: BTreeMap<String, String>,
    pub metrics: Vec<MetricRow>,
    pub history: TrainHistory,
    pub wall_clock_s: f64,
    pub a_true_path: PathBuf,
    pub a_learnt_path: PathBuf,
    pub params_path: PathBuf,
}

fn generate(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset)> {
    Ok(match cfg.task {
        TaskKind::SyntheticO22 => {
            let train = gen_synthetic_o22(cfg.n_samples, rng)?;
            let test = gen_synthetic_with_form(&train.true_form, cfg.n_test, rng)?;
            (train, test)
        }
        TaskKind::Inertia => (
            gen_inertia(cfg.n_points, cfg.n_samples, rng)?,
            gen_inertia(cfg.n_points, cfg.n_test, rng)?,
        ),
        TaskKind::LorentzCls => (gen_lorentz_cls(cfg.n_samples, rng)?, gen_lorentz_cls(cfg.n_test, rng)?),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Gauged matrix of a form, or zeros when it cannot be gauged.
fn gauged_matrix(form: &QuadraticForm) -> DenseMatrix {
    form.canonical_gauge()
        .map(|f| f.matrix().clone())
        .unwrap_or_else(|_| DenseMatrix::zeros(form.dim(), form.dim()))
}

// Trains each start for `restart_epochs`, keeps the one with the lowest
// median per-sample training loss and finishes the epoch budget from there.
// The true form is only used for the recorded history.
fn multi_start_train(
    cfg: &ExperimentConfig,
    data: &Dataset,
    true_form: &QuadraticForm,
    first: GOrthoNet,
    build: &mut impl FnMut(&mut ChaCha8Rng) -> Result<GOrthoNet>,
    init_rng: &mut ChaCha8Rng,
) -> Result<(GOrthoNet, TrainHistory)> {
    let warm = TrainConfig { epochs: cfg.restart_epochs, ..cfg.train.clone() };
    let train_set = training_split(data, &cfg.train)?;
    let mut best: Option<(f64, GOrthoNet, TrainHistory)> = None;
    let mut last_err = None;
    let mut next = Some(first);
    for _ in 0..cfg.form_restarts {
        let mut model = match next.take() {
            Some(m) => m,
            None => build(init_rng)?,
        };
        let history = match train(&mut model, data, &warm, Some(true_form)) {
            Ok(h) => h,
            Err(e @ Error::NanLoss { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let score = median_sample_loss(&mut model, &train_set)?;
        if !score.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, model, history));
        }
    }
    let Some((_, mut model, mut history)) = best else {
        return Err(last_err.unwrap_or(Error::NanLoss { epoch: 0, guard_fired: false }));
    };
    let rest = cfg.train.epochs - cfg.restart_epochs;
    if rest > 0 {
        let more = train(&mut model, data, &TrainConfig { epochs: rest, ..cfg.train.clone() }, Some(true_form))?;
        history.train_loss.extend(more.train_loss);
        history.val_loss.extend(more.val_loss);
        history.cos.extend(more.cos);
        history.guard_hits += more.guard_hits;
        history.best_epoch = more.best_epoch.map(|e| e + cfg.restart_epochs);
    }
    Ok((model, history))
}

/// Runs one experiment (no sweep expansion) and writes its artifacts.
/// A NaN abort still writes `report.json` (status `nan`) before the error
/// is returned.
pub fn run_single(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

    // independent streams for data and initialization
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    data_rng.set_stream(1);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    init_rng.set_stream(2);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    probe_rng.set_stream(3);

    let (raw_train, raw_test) = generate(cfg, &mut data_rng)?;
    if cfg.save_dataset {
        write(&dir.join("train_data.header"), raw_train.header()?)?;
        write(&dir.join("train_data.txt"), raw_train.to_text())?;
    }
    let data = raw_train.normalized()?;
    let test = raw_test.rescaled(data.target_scale)?;
    let true_form = data.true_form.clone();

    let net_cfg = cfg.net_config();
    let mut build = |rng: &mut ChaCha8Rng| {
        let source = match cfg.form_mode {
            FormMode::Frozen => FormSource::Frozen(true_form.clone()),
            FormMode::Learnable => {
                FormSource::Learnable(LearnableForm::with_init(net_cfg.n, cfg.form_init, rng))
            }
        };
        GOrthoNet::new(net_cfg.clone(), source, rng)
    };
    let multi_start = cfg.form_mode == FormMode::Learnable && cfg.form_restarts > 1;
    let mut model = build(&mut init_rng)?;
    let untrained_eq = {
        let mut rng = probe_rng.clone();
        equivariance_error(&mut model.clone(), &true_form, &test, &mut rng)
    };

    let a_true_path = dir.join("A_true.csv");
    let a_learnt_path = dir.join("A_learnt.csv");
    let params_path = dir.join("params.gon1");
    write(&a_true_path, matrix_to_csv(&gauged_matrix(&true_form)))?;

    let mut report = ExperimentReport {
        status: "ok".into(),
        diagnostic: None,
        config: cfg.clone(),
        action: model.config().action,
        target_scale: data.target_scale,
        param_count: model.param_count(),
        test_error: None,
        test_accuracy: None,
        initial_train_loss: None,
        final_train_loss: None,
        cos_raw: None,
        cos: None,
        abs_cos: None,
        d_pa: None,
        equivariance_error: None,
        equivariance_error_untrained: untrained_eq.as_ref().ok().copied(),
        undefined: BTreeMap::new(),
        metrics: Vec::new(),
        history: TrainHistory::default(),
        wall_clock_s: 0.0,
        a_true_path,
        a_learnt_path: a_learnt_path.clone(),
        params_path: params_path.clone(),
    };

    let trained = if multi_start {
        multi_start_train(cfg, &data, &true_form, model, &mut build, &mut init_rng)
    } else {
        train(&mut model, &data, &cfg.train, Some(&true_form)).map(|h| (model, h))
    };
    let (mut model, history) = match trained {
        Ok(h) => h,
        Err(e @ Error::NanLoss { .. }) => {
            report.status = "nan".into();
            report.diagnostic = Some(e.to_string());
            report.wall_clock_s = start.elapsed().as_secs_f64();
            fill_metrics(&mut report, &true_form, None);
            write(&dir.join("report.json"), to_json(&report))?;
            write(&dir.join("metrics.csv"), metrics_csv(&report.metrics))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    report.initial_train_loss = Some(history.initial_train_loss);
    report.final_train_loss = Some(evaluate(&mut model, &training_split(&data, &cfg.train)?, 1024)?);
    report.test_error = Some(evaluate(&mut model, &test, 1024)?);
    if test.classification {
        report.test_accuracy = Some(accuracy(&mut model, &test)?);
    }
    let learnt = model.form()?;
    match equivariance_error(&mut model, &true_form, &test, &mut probe_rng) {
        Ok(v) => report.equivariance_error = Some(v),
        Err(e) => {
            report.undefined.insert("equivariance_error".into(), e.to_string());
        }
    }
    if let Err(e) = untrained_eq {
        report
            .undefined
            .insert("equivariance_error_untrained".into(), e.to_string());
    }
    report.history = history;
    fill_metrics(&mut report, &true_form, Some(&learnt));

    write(&a_learnt_path, matrix_to_csv(&gauged_matrix(&learnt)))?;
    let mut blob = Vec::new();
    model.write_params(&mut blob)?;
    write(&params_path, blob)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    write(&dir.join("report.json"), to_json(&report))?;
    write(&dir.join("metrics.csv"), metrics_csv(&report.metrics))?;
    Ok(report)
}

fn to_json(report: &ExperimentReport) -> String {
    serde_json::to_string_pretty(report).expect("report is always serializable")
}

/// Computes the form metrics and assembles the metrics table.
fn fill_metrics(report: &mut ExperimentReport, truth: &QuadraticForm, learnt: Option<&QuadraticForm>) {
    let mut undefined = std::mem::take(&mut report.undefined);
    let missing = "training aborted".to_string();
    if let Some(a) = learnt {
        match cos_similarity(truth, a) {
            Ok(c) => report.cos_raw = Some(c),
            Err(e) => {
                undefined.insert("cos_raw".into(), e.to_string());
            }
        }
        match gauged_cos(truth, a) {
            Ok(c) => {
                report.cos = Some(c);
                report.abs_cos = Some(c.abs());
            }
            Err(e) => {
                undefined.insert("cos".into(), e.to_string());
                undefined.insert("abs_cos".into(), e.to_string());
            }
        }
        match form_projection_distance(truth, a) {
            Ok(d) => report.d_pa = Some(d),
            Err(reason) => {
                undefined.insert("d_pa".into(), reason);
            }
        }
    } else {
        for k in ["cos_raw", "cos", "abs_cos", "d_pa", "test_error", "equivariance_error"] {
            undefined.entry(k.into()).or_insert_with(|| missing.clone());
        }
    }
    let frozen = report.config.form_mode == FormMode::Frozen;
    let form_note = if frozen { "frozen true form (1 by construction)" } else { "" };
    let error_name = if report.action == Action::Invariant && report.test_accuracy.is_some() {
        "test_bce"
    } else {
        "test_mse"
    };
    let row = |name: &str, value: Option<f64>, gauge: &str, notes: &str| {
        let notes = match (value, undefined.get(name)) {
            (None, Some(reason)) => reason.clone(),
            _ => notes.to_string(),
        };
        MetricRow::new(name, value, gauge, &notes)
    };
    let mut rows = vec![
        row("test_error", report.test_error, "none", error_name),
        row("initial_train_loss", report.initial_train_loss, "none", ""),
        row("final_train_loss", report.final_train_loss, "none", ""),
        row("cos_raw", report.cos_raw, "raw", form_note),
        row("cos", report.cos, "canonical", form_note),
        row("abs_cos", report.abs_cos, "canonical", form_note),
        row("d_pa", report.d_pa, "none", ""),
        row("equivariance_error", report.equivariance_error, "true form", ""),
        row(
            "equivariance_error_untrained",
            report.equivariance_error_untrained,
            "true form",
            "baseline",
        ),
    ];
    if report.test_accuracy.is_some() {
        rows.push(row("test_accuracy", report.test_accuracy, "none", ""));
    }
    for r in &rows {
        if r.value.is_none() && !undefined.contains_key(&r.metric) {
            undefined.insert(r.metric.clone(), "not computed".into());
        }
    }
    report.metrics = rows;
    report.undefined = undefined;
}

/// Runs every config of the (possibly expanded) experiment. With `jobs > 1`
/// sweep members run as child processes of `exe`, at most `jobs` at a time.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, exe: Option<&Path>) -> Result<Vec<ExperimentReport>> {
    cfg.validate()?;
    let members = cfg.expand();
    if members.len() == 1 || jobs <= 1 || exe.is_none() {
        return members.iter().map(run_single).collect();
    }
    let exe = exe.expect("checked above");
    let mut paths = Vec::new();
    for m in &members {
        fs::create_dir_all(&m.output_dir)?;
        let p = m.output_dir.join("config.toml");
        write(&p, m.to_toml())?;
        paths.push(p);
    }
    let mut codes = Vec::new();
    for chunk in paths.chunks(jobs) {
        let children: Vec<_> = chunk
            .iter()
            .map(|p| {
                Command::new(exe)
                    .arg("run")
                    .arg("--config")
                    .arg(p)
                    .env_remove(SEED_ENV)
                    .spawn()
            })
            .collect::<std::result::Result<_, _>>()?;
        for mut c in children {
            codes.push(c.wait()?.code().unwrap_or(EXIT_FAILURE));
        }
    }
    if let Some(&code) = codes.iter().find(|&&c| c != EXIT_OK) {
        return Err(match code {
            EXIT_NAN => Error::NanLoss {
                epoch: 0,
                guard_fired: false,
            },
            EXIT_CONFIG => Error::Config("a sweep member rejected its config".into()),
            _ => Error::Invalid(format!("a sweep member exited with code {code}")),
        });
    }
    members
        .iter()
        .map(|m| {
            let text = fs::read_to_string(m.output_dir.join("report.json"))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
        })
        .collect()
}

/// Reads a form and a vector and renders the canonical alignment.
pub fn align(form_csv: &str, x_csv: &str) -> Result<String> {
    let form = QuadraticForm::from_csv(form_csv)?;
    let x = vector_from_csv(x_csv)?;
    let res = canonical_align(&form, &x)?;
    let mut out = String::from("W:\n");
    for i in 0..form.dim() {
        let row: Vec<String> = res.w().matrix().row_slice(i).iter().map(|v| format!("{v:.12}")).collect();
        out.push_str(&format!("  {}\n", row.join(" ")));
    }
    out.push_str(&format!("gamma: {:?}\n", res.gamma()));
    out.push_str(&format!("target_axis: {}\n", res.target_axis() + 1));
    out.push_str(&format!("membership_residual: {:e}\n", res.membership_residual()));
    out.push_str(&format!("alignment_residual: {:e}\n", res.alignment_residual()));
    Ok(out)
}

/// Preset behind the `model/representability` check: Task 1 with the true
/// form frozen.
pub const REPRESENTABILITY_TOML: &str = include_str!("../../configs/representability.toml");

/// Small, fast run used by the reproducibility check and the tests.
pub const SMOKE_TOML: &str = include_str!("../../configs/smoke.toml");
