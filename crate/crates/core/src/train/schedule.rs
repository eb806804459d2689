use std::fmt;

use serde::{Deserialize, Serialize};

use super::{evaluate, fine_tune, RunRecord, TrainConfig, TrainError};
use crate::data::Dataset;
use crate::model::ModelGraph;
use crate::pruning::{prune_step, MaskSet, PruningPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    OneShot,
    Iterative,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OneShot => "one_shot",
            Self::Iterative => "iterative",
        })
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Pruning rounds; iterative schedules need at least two.
    #[serde(default = "one")]
    pub steps: usize,
    /// Fine-tuning epochs after each pruning round; `None` uses the
    /// training config's epoch count.
    #[serde(default)]
    pub retrain_epochs: Option<u32>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::one_shot(None)
    }
}

impl ScheduleSpec {
    pub fn one_shot(retrain_epochs: Option<u32>) -> Self {
        Self {
            kind: ScheduleKind::OneShot,
            steps: 1,
            retrain_epochs,
        }
    }

    pub fn iterative(steps: usize, retrain_epochs: Option<u32>) -> Self {
        Self {
            kind: ScheduleKind::Iterative,
            steps,
            retrain_epochs,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        match (self.kind, self.steps) {
            (ScheduleKind::OneShot, 1) => Ok(()),
            (ScheduleKind::Iterative, s) if s >= 2 => Ok(()),
            (kind, s) => Err(TrainError::Config(format!("{kind} schedule cannot have {s} steps"))),
        }
    }

    /// `one_shot`, or `iterative(n)` for `n` rounds.
    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::OneShot => self.kind.to_string(),
            ScheduleKind::Iterative => format!("{}({})", self.kind, self.steps),
        }
    }

    /// Cumulative target after each round: `target · i / steps`.
    pub fn step_rates(&self, target_rate: f64) -> Vec<f64> {
        let n = self.steps.max(1);
        (1..=n).map(|i| target_rate * i as f64 / n as f64).collect()
    }

    pub fn epochs(&self, config: &TrainConfig) -> u32 {
        self.retrain_epochs.unwrap_or(config.epochs)
    }
}

/// Result of a prune-retrain schedule.
#[derive(Clone, Debug)]
pub struct ScheduleOutcome {
    pub model: ModelGraph,
    pub masks: MaskSet,
    /// One record per fine-tuning round.
    pub records: Vec<RunRecord>,
    /// Mask state after each pruning round (before its fine-tuning).
    pub step_masks: Vec<MaskSet>,
    /// Validation accuracy right after the first pruning round, before any
    /// fine-tuning.
    pub top1_before_ft: f64,
}

impl ScheduleOutcome {
    pub fn final_accuracy(&self, fallback: f64) -> f64 {
        self.records
            .iter()
            .rev()
            .find_map(|r| r.final_accuracy())
            .unwrap_or(fallback)
    }
}

/// Prunes `base` to the plan's rate in one step, then fine-tunes once.
pub fn one_shot(
    base: &ModelGraph,
    plan: &PruningPlan,
    config: &TrainConfig,
    retrain_epochs: Option<u32>,
    train: &Dataset,
    val: &Dataset,
) -> Result<ScheduleOutcome, TrainError> {
    run_steps(base, plan, &ScheduleSpec::one_shot(retrain_epochs), config, train, val)
}

/// Prunes in `schedule.steps` rounds of linearly increasing rate,
/// re-scoring the current weights and fine-tuning after each round. One
/// step is the one-shot pipeline.
pub fn iterative(
    base: &ModelGraph,
    plan: &PruningPlan,
    schedule: &ScheduleSpec,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<ScheduleOutcome, TrainError> {
    if schedule.steps == 0 {
        return Err(TrainError::Config("iterative schedule needs at least one step".into()));
    }
    run_steps(base, plan, schedule, config, train, val)
}

fn run_steps(
    base: &ModelGraph,
    plan: &PruningPlan,
    schedule: &ScheduleSpec,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<ScheduleOutcome, TrainError> {
    plan.validate()?;
    let epochs = schedule.epochs(config);
    let mut model = base.clone();
    let mut masks = MaskSet::new();
    let mut records = Vec::new();
    let mut step_masks = Vec::new();
    let mut top1_before_ft = None;
    for (step, rate) in schedule.step_rates(plan.target_rate).into_iter().enumerate() {
        let (next, selected) = prune_step(&mut model, &masks, &plan.with_rate(rate))?;
        log::debug!("step {step}: rate {rate:.3}, pruned {} candidates", selected.len());
        masks = next;
        step_masks.push(masks.clone());
        if top1_before_ft.is_none() {
            top1_before_ft = Some(evaluate(&model, val)?);
        }
        let cfg = config.with_epochs(epochs).with_seed(config.seed.wrapping_add(step as u64));
        records.push(fine_tune(&mut model, &masks, train, val, &cfg)?);
    }
    Ok(ScheduleOutcome {
        model,
        masks,
        records,
        step_masks,
        top1_before_ft: top1_before_ft.unwrap_or(0.0),
    })
}
