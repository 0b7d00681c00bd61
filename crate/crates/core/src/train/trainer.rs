//! Batched optimization, evaluation, and the leave-one-subject-out driver.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{loso_split, EEGDataset, LabeledSegment, ValSplit};
use crate::error::{Error, Result};
use crate::model::{Deformer, ModelConfig};
use crate::rng::RngState;
use crate::tensor::{cross_entropy_with_logits, no_grad, Mode, Tensor};
use crate::train::{
    accuracy, cosine_lr, mean_std, metrics_report, AdamState, Checkpoint, MetricsReport,
};

fn default_lr0() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-5
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    64
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate; the cosine schedule decays it toward `lr_min`.
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default)]
    pub lr_min: f64,
    /// Coupled L2 penalty added to every gradient.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the model's dropout probability when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    /// Fraction of the non-test pool held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub val_split: ValSplit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: default_lr0(),
            lr_min: 0.0,
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            betas: default_betas(),
            adam_eps: default_adam_eps(),
            seed: 0,
            dropout_p: None,
            val_fraction: default_val_fraction(),
            val_split: ValSplit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr0 = 0 is allowed: a zero-step run still exercises the loop.
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::Config(format!("lr0 {} must be nonnegative", self.lr0)));
        }
        if !(self.lr_min.is_finite() && (0.0..=self.lr0).contains(&self.lr_min)) {
            return Err(Error::Config(format!(
                "lr_min {} must lie in [0, lr0 = {}]",
                self.lr_min, self.lr0
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::Config(format!(
                "betas {:?} must each lie in [0, 1)",
                self.betas
            )));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "adam_eps {} must be positive",
                self.adam_eps
            )));
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout_p {p} outside [0, 1)")));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
}

fn batch_tensor(
    segments: &[LabeledSegment],
    idx: &[usize],
    c: usize,
    l: usize,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut buf = Vec::with_capacity(idx.len() * c * l);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let seg = &segments[i];
        if seg.samples.len() != c * l {
            return Err(Error::shape(
                "batch",
                format!(
                    "segment {}/{} has {} samples, the model expects {c}x{l}",
                    seg.subject_id,
                    seg.index,
                    seg.samples.len()
                ),
            ));
        }
        buf.extend_from_slice(&seg.samples);
        labels.push(seg.label);
    }
    Ok((Tensor::from_vec(buf, &[idx.len(), c, l])?, labels))
}

fn argmax_rows(data: &[f32], classes: usize) -> Vec<usize> {
    data.chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode class predictions, in input order.
pub fn predict(
    model: &Deformer<f32>,
    data: &[LabeledSegment],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let (c, l) = (model.config.channels, model.config.segment_len);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut preds = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = batch_tensor(data, chunk, c, l)?;
        let trace = no_grad(|| model.infer(&x))?;
        let logits = trace.logits.data();
        preds.extend(argmax_rows(&logits[..], model.config.n_classes));
    }
    Ok(preds)
}

/// Trains the model in place and returns the checkpoint with the highest
/// validation accuracy (ties resolve to the earlier epoch) plus the per-epoch
/// history. Fully determined by `cfg.seed` and the initial model state.
pub fn fit(
    model: &mut Deformer<f32>,
    train: &[LabeledSegment],
    val: &[LabeledSegment],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let seen: HashSet<(&str, usize)> = train
        .iter()
        .map(|s| (s.subject_id.as_str(), s.index))
        .collect();
    if let Some(dup) = val
        .iter()
        .find(|s| seen.contains(&(s.subject_id.as_str(), s.index)))
    {
        return Err(Error::Config(format!(
            "segment {}/{} sits in both the training and validation sets",
            dup.subject_id, dup.index
        )));
    }
    if let Some(p) = cfg.dropout_p {
        model.config.dropout_p = p;
    }

    let (c, l) = (model.config.channels, model.config.segment_len);
    let root = RngState::new(cfg.seed);
    let mut adam = AdamState::new(model.params.named());
    let mut best: Option<Checkpoint> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_labels: Vec<usize> = val.iter().map(|s| s.label).collect();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);
        // One stream per epoch covers both the shuffle and every dropout
        // draw, so the trajectory is a pure function of (seed, epoch).
        let mut rng = root.derive(1 + epoch as u64);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_tensor(train, chunk, c, l)?;
            model.params.zero_grads();
            let trace = model.forward(&x, Mode::Train, &mut rng)?;
            let loss = cross_entropy_with_logits(&trace.logits, &labels)?;
            loss.backward()?;
            adam.step(
                model.params.named(),
                lr,
                cfg.betas,
                cfg.adam_eps,
                cfg.weight_decay,
            )?;
            loss_sum += f64::from(loss.item()) * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let preds = predict(model, val, cfg.batch_size)?;
        let val_acc = accuracy(&preds, &val_labels)?;
        if val_acc > best_acc {
            best_acc = val_acc;
            best = Some(Checkpoint::capture(model, &adam, epoch, val_acc, root)?);
        }
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_acc,
        });
    }
    Ok(FitResult {
        best: best.expect("epochs >= 1 guarantees a best epoch"),
        history,
    })
}

/// Scores checkpointed parameters on labeled data. The passed model supplies
/// the expected architecture and is left untouched; inference runs on a
/// scratch model restored from the checkpoint.
pub fn evaluate(
    model: &Deformer<f32>,
    ckpt: &Checkpoint,
    data: &[LabeledSegment],
) -> Result<MetricsReport> {
    ckpt.validate_against(model)?;
    let (scratch, _) = ckpt.restore_model()?;
    let preds = predict(&scratch, data, 256)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    metrics_report(&preds, &labels, model.config.n_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub subject_id: String,
    pub report: MetricsReport,
    pub history: Vec<EpochStats>,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosoSummary {
    pub acc_mean: f64,
    /// Population standard deviation, matching how subject spread is
    /// reported.
    pub acc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoOutcome {
    pub folds: Vec<FoldOutcome>,
    pub summary: LosoSummary,
}

fn run_fold(
    dataset: &EEGDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    fold_root: RngState,
    subject_id: &str,
) -> Result<FoldOutcome> {
    // Distinct labels keep the split shuffle, parameter init, and training
    // draws on disjoint streams.
    let split = loso_split(
        dataset,
        subject_id,
        train_cfg.val_fraction,
        fold_root.derive(1).seed,
        train_cfg.val_split,
    )?;
    let mut model = Deformer::new(model_cfg.clone(), &fold_root.derive(2))?;
    let fold_cfg = TrainConfig {
        seed: fold_root.derive(3).seed,
        ..train_cfg.clone()
    };
    let FitResult { best, history } = fit(&mut model, &split.train, &split.val, &fold_cfg)?;
    let report = evaluate(&model, &best, &split.test)?;
    Ok(FoldOutcome {
        subject_id: subject_id.to_string(),
        report,
        history,
        checkpoint: best,
    })
}

/// One fit-and-evaluate per held-out subject, each fold seeded independently
/// from `train_cfg.seed`. Folds run in parallel; results are ordered by
/// subject and bitwise independent of scheduling.
pub fn run_loso(
    dataset: &EEGDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<LosoOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    dataset.validate()?;
    if dataset.subjects.len() < 2 {
        return Err(Error::Config(
            "leave-one-subject-out needs at least 2 subjects".into(),
        ));
    }
    let root = RngState::new(train_cfg.seed);
    let folds = dataset
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, subject)| {
            run_fold(
                dataset,
                model_cfg,
                train_cfg,
                root.derive(1 + i as u64),
                &subject.subject_id,
            )
            .map_err(|e| Error::Subject {
                id: subject.subject_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<FoldOutcome>>>()?;

    let accs: Vec<f64> = folds.iter().map(|f| f.report.accuracy).collect();
    let f1s: Vec<f64> = folds.iter().map(|f| f.report.macro_f1).collect();
    let (acc_mean, acc_std) = mean_std(&accs);
    let (f1_mean, f1_std) = mean_std(&f1s);
    Ok(LosoOutcome {
        folds,
        summary: LosoSummary {
            acc_mean,
            acc_std,
            f1_mean,
            f1_std,
        },
    })
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_acc\n");
    for e in history {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.lr, e.train_loss, e.val_acc);
    }
    out
}

pub fn write_history_csv(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-subject rows followed by mean/std footer rows.
pub fn loso_csv(outcome: &LosoOutcome) -> String {
    let mut out = String::from("subject,accuracy,macro_f1\n");
    for f in &outcome.folds {
        let _ = writeln!(out, "{},{},{}", f.subject_id, f.report.accuracy, f.report.macro_f1);
    }
    let s = &outcome.summary;
    let _ = writeln!(out, "mean,{},{}", s.acc_mean, s.f1_mean);
    let _ = writeln!(out, "std,{},{}", s.acc_std, s.f1_std);
    out
}

pub fn write_loso_csv(outcome: &LosoOutcome, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loso_csv(outcome)).map_err(|e| Error::io(path.display().to_string(), e))
}
