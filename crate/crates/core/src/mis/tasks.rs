use std::cmp::Ordering;

use super::{ActivationRecord, MisError};
use crate::model::UnitRef;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplanationSet {
    /// Most activating image ids, strongest first.
    pub plus: Vec<usize>,
    /// Least activating image ids, weakest first.
    pub minus: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MisTask {
    pub explanations: ExplanationSet,
    pub q_plus: usize,
    pub q_minus: usize,
}

/// All tasks of one unit, sharing one explanation set.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSet {
    pub unit: UnitRef,
    pub explanations: ExplanationSet,
    pub tasks: Vec<MisTask>,
    pub degenerate_ties: bool,
    pub dead_unit: bool,
}

/// Image ids ordered by activation, strongest first, ties by ascending id.
pub(crate) fn rank(record: &ActivationRecord) -> Vec<usize> {
    let mut acts = record.activations.clone();
    acts.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    acts.into_iter().map(|(id, _)| id).collect()
}

/// Builds `tasks` tasks: explanations are the `k` extreme images at each
/// end of the ranking, the i-th task pairs the i-th image after the top
/// explanations with the i-th image before the bottom ones. `shuffle_seed`
/// permutes both query pools.
pub fn build_tasks(
    record: &ActivationRecord,
    k: usize,
    tasks: usize,
    shuffle_seed: Option<u64>,
) -> Result<TaskSet, MisError> {
    let n = record.activations.len();
    let need = 2 * (k + tasks);
    if k == 0 || tasks == 0 || n < need {
        return Err(MisError::ProbeTooSmall { have: n, need: need.max(2), k, tasks });
    }
    let order = rank(record);
    let explanations = ExplanationSet { plus: order[..k].to_vec(), minus: order[n - k..].iter().rev().copied().collect() };
    let mut high: Vec<usize> = order[k..k + tasks].to_vec();
    let mut low: Vec<usize> = (0..tasks).map(|i| order[n - k - 1 - i]).collect();
    if let Some(seed) = shuffle_seed {
        Rng::derive(seed, 0).shuffle(&mut high);
        Rng::derive(seed, 1).shuffle(&mut low);
    }
    let first = record.activations[0].1;
    let degenerate_ties = record.activations.iter().all(|&(_, a)| a == first);
    let tasks = high
        .into_iter()
        .zip(low)
        .map(|(q_plus, q_minus)| MisTask { explanations: explanations.clone(), q_plus, q_minus })
        .collect();
    Ok(TaskSet { unit: record.unit.clone(), explanations, tasks, degenerate_ties, dead_unit: record.is_dead() })
}
