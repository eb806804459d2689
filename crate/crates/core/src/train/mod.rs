//! Mask-preserving fine-tuning, evaluation, and the one-shot / iterative
//! prune-retrain schedules.

mod schedule;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use schedule::{iterative, one_shot, ScheduleKind, ScheduleOutcome, ScheduleSpec};

use crate::data::Dataset;
use crate::engine::{lr_at_epoch, EngineError, OptimizerKind, OptimizerState, Tape};
use crate::model::{ModelError, ModelGraph};
use crate::pruning::{apply_masks, sparsity_report, MaskSet, PruneError};
use crate::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u32, batch: usize, loss: f32 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prune(#[from] PruneError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    #[default]
    Sgd,
    Adam,
}

fn default_momentum() -> f32 {
    0.9
}
fn default_gamma() -> f32 {
    0.95
}
fn default_epochs() -> u32 {
    50
}
fn default_batch() -> usize {
    32
}

/// Optimizer, schedule and loop settings for one training run.
///
/// Defaults: SGD at 0.01 (Adam at 0.001), momentum 0.9, exponential decay
/// 0.95 per epoch, 50 epochs, batch 32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    /// Base learning rate; `None` means the optimizer's default.
    #[serde(default)]
    pub lr: Option<f32>,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default = "default_gamma")]
    pub gamma: f32,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once validation accuracy improves by less than 0.1 points over
    /// five epochs.
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerChoice::Sgd,
            lr: None,
            momentum: default_momentum(),
            gamma: default_gamma(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn base_lr(&self) -> f32 {
        self.lr.unwrap_or(match self.optimizer {
            OptimizerChoice::Sgd => 0.01,
            OptimizerChoice::Adam => 0.001,
        })
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::sgd(self.momentum),
            OptimizerChoice::Adam => OptimizerKind::adam(),
        }
    }

    pub fn with_epochs(&self, epochs: u32) -> Self {
        Self {
            epochs,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Config with every default made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            lr: Some(self.base_lr()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        let lr = self.base_lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be > 0, got {lr}")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_top1: f64,
    pub lr: f32,
}

/// One fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRow>,
    pub optimizer: String,
    pub momentum: f32,
    pub base_lr: f32,
    pub gamma: f32,
    pub achieved_sparsity: f64,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.val_top1)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.val_top1).collect()
    }

    /// Flat per-epoch rows for CSV output.
    pub fn csv_rows(&self) -> Vec<RunCsvRow> {
        self.epochs
            .iter()
            .map(|r| RunCsvRow {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_top1: r.val_top1,
                lr: r.lr,
                optimizer: self.optimizer.clone(),
                momentum: self.momentum,
                achieved_sparsity: self.achieved_sparsity,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCsvRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_top1: f64,
    pub lr: f32,
    pub optimizer: String,
    pub momentum: f32,
    pub achieved_sparsity: f64,
}

const EVAL_BATCH: usize = 64;

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax class for every sample. Batches are evaluated in parallel
/// against the read-only model.
pub fn predict(model: &ModelGraph, dataset: &Dataset) -> Result<Vec<usize>, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Result<Vec<Vec<usize>>, TrainError> = indices
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let (x, _) = dataset.batch(chunk);
            let logits = model.logits(x)?;
            let c = logits.shape()[1];
            Ok(logits.data().chunks(c).map(argmax).collect())
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Top-1 accuracy: fraction of samples whose argmax logit is the label.
pub fn evaluate(model: &ModelGraph, dataset: &Dataset) -> Result<f64, TrainError> {
    let preds = predict(model, dataset)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Observes the model after every optimizer step (and mask re-application).
pub type StepHook<'a> = dyn FnMut(&ModelGraph, u64) + 'a;

/// Trains with masks held fixed: masked gradients are zeroed before every
/// optimizer step and the masks are re-applied after it, so masked weights
/// stay exactly zero throughout.
pub fn fine_tune(
    model: &mut ModelGraph,
    masks: &MaskSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    fine_tune_with_hook(model, masks, train, val, config, &mut |_, _| {})
}

pub fn fine_tune_with_hook(
    model: &mut ModelGraph,
    masks: &MaskSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    hook: &mut StepHook<'_>,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let start = Instant::now();
    let kind = config.optimizer_kind();
    let base_lr = config.base_lr();
    let mut rows = Vec::with_capacity(config.epochs as usize);
    if config.epochs > 0 {
        apply_masks(model, masks)?;
        model.zero_grad();
        let mut opt = OptimizerState::new(kind, model.params());
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..config.epochs {
            let lr = lr_at_epoch(base_lr, config.gamma, epoch);
            Rng::derive(config.seed, epoch as u64).shuffle(&mut order);
            let mut loss_sum = 0.0f64;
            let mut batches = 0usize;
            for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
                let (x, labels) = train.batch(chunk);
                let mut tape = Tape::new();
                let input = tape.input(x);
                let fwd = model.record(&mut tape, input)?;
                let loss = tape.cross_entropy(fwd.logits, &labels)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch,
                        loss: value,
                    });
                }
                tape.backward(loss, model.params_mut())?;
                crate::pruning::mask_gradients(model, masks);
                opt.step(model.params_mut(), lr)?;
                apply_masks(model, masks)?;
                model.zero_grad();
                hook(model, opt.steps());
                loss_sum += value as f64;
                batches += 1;
            }
            let val_top1 = evaluate(model, val)?;
            log::debug!("epoch {epoch}: loss {:.4} val {:.4} lr {lr:.5}", loss_sum / batches as f64, val_top1);
            rows.push(EpochRow {
                epoch,
                train_loss: loss_sum / batches as f64,
                val_top1,
                lr,
            });
            if config.early_stop && plateaued(&rows) {
                break;
            }
        }
        model.params_mut().iter_mut().for_each(|p| p.tensor.clear_grad());
    }
    Ok(RunRecord {
        epochs: rows,
        optimizer: kind.name().to_string(),
        momentum: kind.momentum(),
        base_lr,
        gamma: config.gamma,
        achieved_sparsity: sparsity_report(model, masks).achieved_rate(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Less than 0.1 points of improvement over the best accuracy seen before
/// the last five epochs.
fn plateaued(rows: &[EpochRow]) -> bool {
    const WINDOW: usize = 5;
    if rows.len() <= WINDOW {
        return false;
    }
    let split = rows.len() - WINDOW;
    let before = rows[..split].iter().map(|r| r.val_top1).fold(f64::MIN, f64::max);
    let recent = rows[split..].iter().map(|r| r.val_top1).fold(f64::MIN, f64::max);
    recent - before < 0.001
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticShapes;
    use crate::model::{build_plain_cnn, PlainCnnSpec};
    use crate::pruning::{prune_step, Criterion, Method, PruningPlan, Scope};

    fn data() -> (Dataset, Dataset) {
        SyntheticShapes::new(4, 48, 5).generate().unwrap().split(0.25).unwrap()
    }

    #[test]
    fn defaults_follow_documented_values() {
        let c = TrainConfig::default();
        assert_eq!(c.base_lr(), 0.01);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.gamma, 0.95);
        assert_eq!(c.epochs, 50);
        let adam = TrainConfig {
            optimizer: OptimizerChoice::Adam,
            ..TrainConfig::default()
        };
        assert_eq!(adam.base_lr(), 0.001);
    }

    #[test]
    fn constant_predictor_accuracy() {
        // zero weights, bias favouring class 0 → always predicts 0
        let (_, val) = data();
        let mut m = build_plain_cnn(&PlainCnnSpec::new(3, 4), 0).unwrap();
        for p in m.params_mut() {
            p.tensor.data_mut().fill(0.0);
        }
        m.param_mut("fc.bias").unwrap().tensor.data_mut()[0] = 1.0;
        let acc = evaluate(&m, &val).unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (train, _) = data();
        let empty = train.subset(&[]);
        let m = build_plain_cnn(&PlainCnnSpec::new(3, 4), 0).unwrap();
        assert!(matches!(evaluate(&m, &empty), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn zero_epochs_leaves_model_untouched() {
        let (train, val) = data();
        let mut m = build_plain_cnn(&PlainCnnSpec::new(3, 4), 0).unwrap();
        let before = m.clone();
        let rec = fine_tune(&mut m, &MaskSet::new(), &train, &val, &TrainConfig::default().with_epochs(0)).unwrap();
        assert!(rec.epochs.is_empty());
        assert!(m.params_bit_eq(&before));
    }

    #[test]
    fn masked_weights_stay_zero_and_runs_repeat() {
        let (train, val) = data();
        let run = || {
            let mut m = build_plain_cnn(&PlainCnnSpec::new(3, 4), 1).unwrap();
            let plan = PruningPlan::new(Method::Unstructured, Criterion::L1, Scope::Global, 0.5);
            let (masks, _) = prune_step(&mut m, &MaskSet::new(), &plan).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            };
            let mut violations = 0;
            let rec = fine_tune_with_hook(&mut m, &masks, &train, &val, &cfg, &mut |model, _| {
                for (name, mask) in masks.iter() {
                    let w = model.param(name).unwrap().tensor.data();
                    violations += w
                        .iter()
                        .zip(mask.data())
                        .filter(|(w, m)| **m == 0.0 && w.to_bits() != 0)
                        .count();
                }
            })
            .unwrap();
            assert_eq!(violations, 0);
            (m, rec)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert!(m1.params_bit_eq(&m2));
        assert_eq!(r1.accuracies(), r2.accuracies());
        assert_eq!(r1.epochs.len(), 2);
        assert!((r1.achieved_sparsity - 0.5).abs() < 0.01);
        assert_eq!(r1.epochs[1].lr, lr_at_epoch(0.01, 0.95, 1));
    }

    #[test]
    fn plateau_detection() {
        let rows = |accs: &[f64]| -> Vec<EpochRow> {
            accs.iter()
                .enumerate()
                .map(|(i, a)| EpochRow {
                    epoch: i as u32,
                    train_loss: 0.0,
                    val_top1: *a,
                    lr: 0.01,
                })
                .collect()
        };
        assert!(!plateaued(&rows(&[0.1, 0.2, 0.3, 0.4, 0.5])));
        assert!(plateaued(&rows(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5])));
        assert!(!plateaued(&rows(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.52])));
    }
}
