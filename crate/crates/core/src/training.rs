//! SGD training with momentum, weight decay and plateau learning-rate decay.
//!
//! Every stochastic choice of step `s` draws from its own ChaCha stream
//! `(seed, s)`, so a run resumed from a checkpoint replays exactly the
//! batches and augmentations of an uninterrupted one.

use std::collections::VecDeque;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SchedulerState};
use crate::config::{Config, MeanSource};
use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::losses::{GroundTruthMask, LossBreakdown, StructuralLoss};
use crate::metrics::{self, EvalOptions};
use crate::network::{FusionMode, Mode, Sfcn, SfcnConfig};
use crate::reflection::{compute_dataset_mean, reflect, MeanImage, ReciprocalPair};
use crate::losses::LossWeights;

/// Model variants of the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationPreset {
    /// Concat-only fusion, plain cross-entropy.
    A,
    /// Hierarchical fusion, plain cross-entropy.
    B,
    /// Hierarchical fusion, class-balanced cross-entropy.
    C,
    /// (c) plus the semantic content term.
    D,
    /// (c) plus the smooth L1 term.
    E,
    /// Every term.
    #[default]
    Full,
}

impl AblationPreset {
    pub const ALL: [AblationPreset; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::Full];

    /// Accepts `a`..`e`, `full`, or the `table3-` prefixed forms.
    pub fn parse(name: &str) -> Result<Self> {
        let short = name.strip_prefix("table3-").unwrap_or(name);
        match short {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            "e" => Ok(Self::E),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected table3-a..table3-e or full)"))),
        }
    }

    /// Sets the fusion mode and switches loss terms on or off. Term weights
    /// that stay on keep their configured magnitude.
    pub fn apply(self, model: &mut SfcnConfig, loss: &mut LossWeights) {
        use AblationPreset::*;
        model.fusion = if self == A { FusionMode::ConcatOnly } else { FusionMode::Hierarchical };
        loss.weighted = !matches!(self, A | B);
        if !matches!(self, D | Full) {
            loss.mu = 0.0;
        }
        if !matches!(self, E | Full) {
            loss.gamma = 0.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Window length of the plateau rule, in steps.
    pub plateau_patience: usize,
    /// Relative window-mean improvement below which the loss counts as flat.
    pub plateau_threshold: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Evaluation and checkpoint period in steps (0 disables both).
    pub eval_every: u64,
    #[serde(rename = "ablation_preset", alias = "preset")]
    pub preset: AblationPreset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// From-scratch training at laptop scale.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 0.0005,
            base_lr: 1e-2,
            lr_decay_factor: 0.9,
            plateau_patience: 50,
            plateau_threshold: 0.01,
            max_steps: 500,
            seed: 0,
            eval_every: 100,
            preset: AblationPreset::Full,
        }
    }

    /// Fine-tuning settings of the original setup (batch 12, lr 1e-8).
    pub fn paper() -> Self {
        Self {
            batch_size: 12,
            base_lr: 1e-8,
            max_steps: 150_000,
            eval_every: 5_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("train.batch_size must be >= 1");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return fail("train.base_lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("train.momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("train.weight_decay must be >= 0");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail("train.lr_decay_factor must lie in (0, 1]");
        }
        if self.plateau_patience == 0 {
            return fail("train.plateau_patience must be >= 1");
        }
        if !(self.plateau_threshold >= 0.0) {
            return fail("train.plateau_threshold must be >= 0");
        }
        Ok(())
    }
}

/// SGD with momentum and L2 weight decay over a flat parameter vector:
/// `v <- m v + g + wd p`, `p <- p - lr v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::shape(self.velocity.len(), (params.len(), grad.len())));
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
        Ok(())
    }
}

/// Decays the learning rate when the mean loss of the latest window of
/// `patience` steps improves on the window before it by less than
/// `threshold` (relative). Both windows must lie after the previous decay.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub threshold: f64,
    pub factor: f64,
    window: VecDeque<f64>,
}

impl PlateauScheduler {
    pub fn new(patience: usize, threshold: f64, factor: f64) -> Self {
        Self {
            patience,
            threshold,
            factor,
            window: VecDeque::with_capacity(2 * patience),
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.plateau_patience, c.plateau_threshold, c.lr_decay_factor)
    }

    /// Losses recorded since the last decay (at most two windows).
    pub fn recent(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    pub fn restore(&mut self, recent: &[f64]) -> Result<()> {
        if recent.len() > 2 * self.patience {
            return Err(Error::Checkpoint(format!(
                "scheduler history of {} exceeds two windows of {}",
                recent.len(),
                self.patience
            )));
        }
        self.window = recent.iter().copied().collect();
        Ok(())
    }

    /// Records `loss` and returns the learning rate for the next step.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if self.window.len() == 2 * self.patience {
            self.window.pop_front();
        }
        self.window.push_back(loss);
        if self.window.len() < 2 * self.patience {
            return lr;
        }
        let p = self.patience as f64;
        let prev = self.window.iter().take(self.patience).sum::<f64>() / p;
        let cur = self.window.iter().skip(self.patience).sum::<f64>() / p;
        let improvement = if prev == 0.0 { 0.0 } else { (prev - cur) / prev.abs() };
        if improvement < self.threshold {
            self.window.clear();
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Applies the plateau rule to a complete loss history starting at `lr`.
pub fn plateau_scheduler(history: &[f64], lr: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(patience, 0.01, 0.9);
    history.iter().fold(lr, |lr, &l| s.observe(l, lr))
}

/// One row of `train_log.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub wbce: f64,
    pub sc: f64,
    pub s1: f64,
}

/// One row of `eval_log.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub split: String,
    pub fmax: f64,
    pub mae: f64,
    pub smeasure: f64,
}

/// Resolves the reflection mean for a training set.
pub fn resolve_mean(source: &MeanSource, samples: &[Sample]) -> Result<MeanImage> {
    match source {
        MeanSource::Rgb(v) => Ok(MeanImage::ScalarPerChannel(*v)),
        MeanSource::Named(_) => compute_dataset_mean(samples.iter().map(|s| &s.image)),
    }
}

/// Training loop state.
pub struct Trainer {
    /// Configuration as given; the preset is applied on top.
    config: Config,
    model: Sfcn,
    loss: StructuralLoss,
    sgd: Sgd,
    scheduler: PlateauScheduler,
    mean: MeanImage,
    step: u64,
    lr: f64,
    samples: Vec<Sample>,
    validation: Vec<Sample>,
    log: Vec<LogRow>,
    evals: Vec<EvalRow>,
}

/// Model and loss settings after applying the ablation preset.
pub fn effective_settings(config: &Config) -> (SfcnConfig, LossWeights) {
    let mut model = config.model.clone();
    let mut loss = config.loss.clone();
    config.train.preset.apply(&mut model, &mut loss);
    (model, loss)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn check_samples(samples: &[Sample], size: [usize; 2]) -> Result<()> {
    for s in samples {
        if [s.image.height(), s.image.width()] != size || s.mask.dim() != (size[0], size[1]) {
            return Err(Error::shape(size, (s.stem.as_str(), s.image.height(), s.image.width())));
        }
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: Config, samples: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (model_cfg, loss_cfg) = effective_settings(&config);
        check_samples(&samples, model_cfg.input_size)?;
        let model = Sfcn::new(model_cfg, config.train.seed)?;
        let loss = StructuralLoss::new(loss_cfg)?;
        let mean = resolve_mean(&config.data.mean, &samples)?;
        let sgd = Sgd::new(model.params().num_trainable(), config.train.momentum, config.train.weight_decay);
        Ok(Self {
            scheduler: PlateauScheduler::from_config(&config.train),
            lr: config.train.base_lr,
            config,
            model,
            loss,
            sgd,
            mean,
            step: 0,
            samples,
            validation: Vec::new(),
            log: Vec::new(),
            evals: Vec::new(),
        })
    }

    /// Restores a checkpointed run; `samples` must be the training set it used.
    pub fn from_checkpoint(ckpt: &Checkpoint, samples: Vec<Sample>) -> Result<Self> {
        let config = Config::from_toml_str(&ckpt.config_toml)?;
        let mut t = Self::new(config, samples)?;
        t.model.params_mut().load_tensor_map(&ckpt.tensors)?;
        let velocity = ckpt.momentum_vector(t.model.params())?;
        t.sgd.velocity = velocity;
        t.scheduler.restore(&ckpt.scheduler.recent)?;
        t.mean = ckpt.mean.clone();
        t.step = ckpt.step;
        t.lr = ckpt.lr;
        Ok(t)
    }

    pub fn with_validation(mut self, samples: Vec<Sample>) -> Result<Self> {
        check_samples(&samples, self.model.config().input_size)?;
        self.validation = samples;
        Ok(self)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model(&self) -> &Sfcn {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Sfcn {
        &mut self.model
    }

    pub fn mean(&self) -> &MeanImage {
        &self.mean
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn evals(&self) -> &[EvalRow] {
        &self.evals
    }

    pub fn velocity(&self) -> &[f64] {
        &self.sgd.velocity
    }

    fn batch(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<ReciprocalPair>, Vec<GroundTruthMask>)> {
        let n = self.samples.len();
        let picks = index::sample(rng, n, self.config.train.batch_size.min(n));
        let mut pairs = Vec::with_capacity(picks.len());
        let mut masks = Vec::with_capacity(picks.len());
        for i in picks.iter() {
            let s = &self.samples[i];
            let aug_seed: u64 = rng.random();
            let (image, mask) = if self.config.data.augment {
                data::augment(&s.image, &s.mask, aug_seed)?
            } else {
                (s.image.clone(), s.mask.clone())
            };
            pairs.push(reflect(&image, &self.mean, self.config.data.k)?);
            masks.push(mask);
        }
        Ok((pairs, masks))
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<LogRow> {
        let mut rng = step_rng(self.config.train.seed, self.step);
        let (pairs, masks) = self.batch(&mut rng)?;
        let maps = self.model.forward_recorded(&pairs, Mode::Train)?;
        let preds = stack_probs(maps.iter().map(|m| &m.probabilities));
        let (breakdown, dprob) = self.loss.evaluate_with_grad(&preds, &masks)?;
        if !breakdown.is_finite() || preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.step + 1,
                detail: format!("{breakdown:?} at lr {}", self.lr),
            });
        }
        let grads = self.model.backward(&dprob)?;
        let mut theta = self.model.params().trainable_vector();
        self.sgd.step(&mut theta, &grads.trainable_vector(), self.lr)?;
        self.model.params_mut().set_trainable_vector(&theta)?;
        self.step += 1;
        let row = log_row(self.step, self.lr, &breakdown);
        self.lr = self.scheduler.observe(breakdown.total, self.lr);
        self.log.push(row);
        Ok(row)
    }

    /// Eval-mode probabilities for `samples`, in order.
    pub fn predict(&mut self, samples: &[Sample]) -> Result<Vec<ndarray::Array2<f64>>> {
        predict_maps(&mut self.model, &self.mean, self.config.data.k, samples.iter().map(|s| &s.image))
    }

    /// Evaluates the validation split, or the training split without one.
    pub fn evaluate(&mut self) -> Result<EvalRow> {
        let (split, samples) = if self.validation.is_empty() {
            (self.config.data.train_split.clone(), self.samples.clone())
        } else {
            (self.config.data.val_split.clone(), self.validation.clone())
        };
        let preds = self.predict(&samples)?;
        let report = metrics::evaluate_maps(
            samples.iter().zip(&preds).map(|(s, p)| (s.stem.as_str(), p.view(), &s.mask)),
            EvalOptions::default(),
        )?;
        let row = EvalRow {
            step: self.step,
            split,
            fmax: report.fmax,
            mae: report.mae,
            smeasure: report.s_measure,
        };
        self.evals.push(row.clone());
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            self.model.params(),
            &self.sgd.velocity,
            &self.mean,
            self.step,
            self.lr,
            SchedulerState {
                recent: self.scheduler.recent(),
            },
        )
    }

    /// Runs until `train.max_steps`. With `out`, appends to
    /// `train_log.csv` / `eval_log.csv` and writes `step_<n>.ckpt` every
    /// `eval_every` steps plus `final.ckpt`. A non-finite loss writes
    /// `diagnostic.json` before returning the error.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        let mut logs = out.map(RunFiles::open).transpose()?;
        let eval_every = self.config.train.eval_every;
        while self.step < self.config.train.max_steps {
            let row = match self.step() {
                Ok(row) => row,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    if let Some(dir) = out {
                        self.write_diagnostic(dir, &e)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if let Some(f) = logs.as_mut() {
                f.train(&row)?;
            }
            if eval_every > 0 && self.step % eval_every == 0 {
                let eval = self.evaluate()?;
                log::info!(
                    "step {} lr {:.3e} loss {:.5} {} fmax {:.4} mae {:.4} s {:.4}",
                    self.step,
                    row.lr,
                    row.total,
                    eval.split,
                    eval.fmax,
                    eval.mae,
                    eval.smeasure
                );
                if let (Some(f), Some(dir)) = (logs.as_mut(), out) {
                    f.eval(&eval)?;
                    self.checkpoint().save(&dir.join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(())
    }

    fn write_diagnostic(&self, dir: &Path, error: &Error) -> Result<()> {
        let mut norms = serde_json::Map::new();
        self.model.params().visit(&mut |name, _, _, data| {
            let n = data.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.insert(name.to_owned(), serde_json::json!(if n.is_finite() { n.to_string() } else { format!("{n}") }));
        });
        let dump = serde_json::json!({
            "error": error.to_string(),
            "step": self.step,
            "lr": self.lr,
            "recent_losses": self.scheduler.recent(),
            "parameter_norms": norms,
        });
        let path = dir.join("diagnostic.json");
        fs::write(&path, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&path, e))
    }
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_LOG: &str = "eval_log.csv";

fn log_row(step: u64, lr: f64, b: &LossBreakdown) -> LogRow {
    LogRow {
        step,
        lr,
        total: b.total,
        wbce: b.pixel,
        sc: b.sc,
        s1: b.s1,
    }
}

/// Stacks `[H, W]` maps into `[N, H, W]`.
pub fn stack_probs<'a>(maps: impl IntoIterator<Item = &'a ndarray::Array2<f64>>) -> Array3<f64> {
    let views: Vec<_> = maps.into_iter().map(|m| m.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal map sizes")
}

/// Eval-mode foreground probabilities, one image at a time.
pub fn predict_maps<'a>(
    model: &mut Sfcn,
    mean: &MeanImage,
    k: f64,
    images: impl IntoIterator<Item = &'a crate::reflection::ImageTensor>,
) -> Result<Vec<ndarray::Array2<f64>>> {
    images
        .into_iter()
        .map(|img| {
            let pair = reflect(img, mean, k)?;
            let mut maps = model.forward(std::slice::from_ref(&pair), Mode::Eval)?;
            Ok(maps.remove(0).probabilities)
        })
        .collect()
}

struct RunFiles {
    train: fs::File,
    eval: fs::File,
    train_path: PathBuf,
    eval_path: PathBuf,
}

fn append_with_header(path: &Path, header: &str) -> Result<fs::File> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

impl RunFiles {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let train_path = dir.join(TRAIN_LOG);
        let eval_path = dir.join(EVAL_LOG);
        Ok(Self {
            train: append_with_header(&train_path, "step,lr,total,wbce,sc,s1")?,
            eval: append_with_header(&eval_path, "step,split,fmax,mae,smeasure")?,
            train_path,
            eval_path,
        })
    }

    fn train(&mut self, r: &LogRow) -> Result<()> {
        writeln!(self.train, "{},{},{},{},{},{}", r.step, r.lr, r.total, r.wbce, r.sc, r.s1)
            .map_err(|e| Error::io(&self.train_path, e))
    }

    fn eval(&mut self, r: &EvalRow) -> Result<()> {
        writeln!(self.eval, "{},{},{},{},{}", r.step, r.split, r.fmax, r.mae, r.smeasure)
            .map_err(|e| Error::io(&self.eval_path, e))
    }
}

/// Reads a `train_log.csv`.
pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Csv(e.to_string()))).collect()
}
