//! Mechanistic interpretability score: a similarity-based observer decides
//! two-alternative forced-choice tasks built from each unit's most and
//! least activating probe images.

mod similarity;
mod stats;
mod tasks;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use similarity::{BackendKind, EmbeddingBank, Similarity, SimilarityBackend};
pub use stats::{classwise_accuracy, classwise_from_predictions, pearson_corr};
pub use tasks::{build_tasks, ExplanationSet, MisTask, TaskSet};

use crate::data::Dataset;
use crate::model::{probe_units, unit_activations, ModelError, ModelGraph, UnitAggregation, UnitRef};
use crate::train::TrainError;

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_TASKS: usize = 20;
pub const DEFAULT_BETA: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum MisError {
    #[error("probe set has {have} images, at least {need} are needed for k={k} and {tasks} tasks")]
    ProbeTooSmall { have: usize, need: usize, k: usize, tasks: usize },
    #[error("invalid activation record: {0}")]
    Record(String),
    #[error("image {0} is not in the probe set")]
    MissingImage(usize),
    #[error("no tasks to score")]
    NoTasks,
    #[error("classes absent from the dataset: {0:?}")]
    MissingClasses(Vec<usize>),
    #[error("{0}")]
    Stats(String),
    #[error("invalid MIS configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Per-image activations of one unit over the probe set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub unit: UnitRef,
    pub activations: Vec<(usize, f32)>,
}

impl ActivationRecord {
    pub fn new(unit: UnitRef, activations: Vec<(usize, f32)>) -> Result<Self, MisError> {
        let mut ids: Vec<usize> = activations.iter().map(|&(id, _)| id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(MisError::Record(format!("duplicate image id in record for {}", unit.layer)));
        }
        if let Some(&(id, _)) = activations.iter().find(|(_, a)| !a.is_finite()) {
            return Err(MisError::Record(format!("non-finite activation for image {id} in {}", unit.layer)));
        }
        Ok(Self { unit, activations })
    }

    /// Every activation is exactly zero.
    pub fn is_dead(&self) -> bool {
        self.activations.iter().all(|&(_, a)| a == 0.0)
    }

    /// Applies `f` to every activation, keeping the image ids.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self, MisError> {
        Self::new(self.unit.clone(), self.activations.iter().map(|&(id, a)| (id, f(a))).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MisConfig {
    pub k: usize,
    pub tasks: usize,
    pub beta: f64,
    /// Shuffles the query pools; `None` keeps the sorted pairing.
    pub shuffle_seed: Option<u64>,
    pub aggregation: UnitAggregation,
}

impl Default for MisConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, tasks: DEFAULT_TASKS, beta: DEFAULT_BETA, shuffle_seed: None, aggregation: UnitAggregation::Mean }
    }
}

impl MisConfig {
    pub fn validate(&self) -> Result<(), MisError> {
        if self.k == 0 || self.tasks == 0 {
            return Err(MisError::Config("k and tasks must be positive".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(MisError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    /// Smallest probe set that keeps explanations and queries disjoint.
    pub fn min_probe_images(&self) -> usize {
        2 * (self.k + self.tasks)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MisFlags {
    /// All activations were equal; ordering fell back to image ids.
    pub degenerate_ties: bool,
    /// All activations were zero; mis is reported as 0.5.
    pub dead_unit: bool,
    /// Number of tasks with an exactly zero margin.
    pub ties: usize,
}

impl fmt::Display for MisFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.dead_unit {
            parts.push("dead_unit".to_string());
        }
        if self.degenerate_ties {
            parts.push("degenerate_ties".to_string());
        }
        if self.ties > 0 {
            parts.push(format!("tie={}", self.ties));
        }
        f.write_str(&parts.join(";"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MisResult {
    pub unit: UnitRef,
    pub mis: f64,
    pub confidence: f64,
    pub task_count: usize,
    pub flags: MisFlags,
}

/// Outcome of one task: whether the observer picked the strongly
/// activating query, and the score difference it based that on.
pub fn observer_decide(task: &MisTask, sim: &dyn Similarity) -> Result<(bool, f64), MisError> {
    let score = |q: usize| -> Result<f64, MisError> {
        let mean = |set: &[usize]| -> Result<f64, MisError> {
            let mut acc = 0.0;
            for &e in set {
                acc += sim.sim(q, e)?;
            }
            Ok(acc / set.len() as f64)
        };
        Ok(mean(&task.explanations.plus)? - mean(&task.explanations.minus)?)
    };
    let margin = score(task.q_plus)? - score(task.q_minus)?;
    Ok((margin > 0.0, margin))
}

/// Scores a unit's task set. Dead units get mis 0.5 without consulting
/// the observer.
pub fn mis_score(set: &TaskSet, sim: &dyn Similarity, beta: f64) -> Result<MisResult, MisError> {
    if set.tasks.is_empty() {
        return Err(MisError::NoTasks);
    }
    let n = set.tasks.len();
    let mut flags = MisFlags { degenerate_ties: set.degenerate_ties, dead_unit: set.dead_unit, ties: 0 };
    if set.dead_unit {
        return Ok(MisResult { unit: set.unit.clone(), mis: 0.5, confidence: 0.5, task_count: n, flags });
    }
    let mut correct = 0usize;
    let mut confidence = 0.0;
    for task in &set.tasks {
        let (ok, margin) = observer_decide(task, sim)?;
        correct += ok as usize;
        if margin == 0.0 {
            flags.ties += 1;
        }
        confidence += 1.0 / (1.0 + (-beta * margin).exp());
    }
    Ok(MisResult {
        unit: set.unit.clone(),
        mis: correct as f64 / n as f64,
        confidence: confidence / n as f64,
        task_count: n,
        flags,
    })
}

/// One record per probe unit, in [`probe_units`] order, with image ids
/// equal to probe-set indices.
pub fn probe_activations(
    model: &ModelGraph,
    probe: &Dataset,
    config: &MisConfig,
) -> Result<Vec<ActivationRecord>, MisError> {
    config.validate()?;
    let need = config.min_probe_images();
    if probe.len() < need {
        return Err(MisError::ProbeTooSmall { have: probe.len(), need, k: config.k, tasks: config.tasks });
    }
    let indices: Vec<usize> = (0..probe.len()).collect();
    let chunks: Vec<Vec<Vec<f32>>> = indices
        .par_chunks(64)
        .map(|chunk| unit_activations(model, probe.batch(chunk).0, config.aggregation))
        .collect::<Result<_, _>>()?;
    probe_units(model)
        .into_iter()
        .enumerate()
        .map(|(u, unit)| {
            let acts = chunks.iter().flat_map(|c| c[u].iter().copied()).enumerate().collect();
            ActivationRecord::new(unit, acts)
        })
        .collect()
}

/// Probes every unit and scores it. Units are evaluated in parallel; the
/// result order follows [`probe_units`].
pub fn evaluate_units(
    model: &ModelGraph,
    probe: &Dataset,
    sim: &(dyn Similarity + Sync),
    config: &MisConfig,
) -> Result<Vec<MisResult>, MisError> {
    let records = probe_activations(model, probe, config)?;
    records
        .par_iter()
        .map(|r| {
            let set = build_tasks(r, config.k, config.tasks, config.shuffle_seed)?;
            mis_score(&set, sim, config.beta)
        })
        .collect()
}

/// Mean mis and mean confidence over `results`.
pub fn mean_scores(results: &[MisResult]) -> Option<(f64, f64)> {
    if results.is_empty() {
        return None;
    }
    let n = results.len() as f64;
    Some((
        results.iter().map(|r| r.mis).sum::<f64>() / n,
        results.iter().map(|r| r.confidence).sum::<f64>() / n,
    ))
}
