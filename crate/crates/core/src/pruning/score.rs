use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Criterion, MaskSet, Method, PruneError};
use crate::model::{list_prunable_tensors, ModelGraph};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Element,
    OutChannel,
    InChannel,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Element => "element",
            Self::OutChannel => "out_channel",
            Self::InChannel => "in_channel",
        })
    }
}

/// One thing that can be pruned: a weight, or a whole channel slice.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateUnit {
    pub tensor: String,
    pub granularity: Granularity,
    /// Flat element index, or channel index.
    pub index: usize,
    pub score: f64,
    /// Elements this candidate would newly zero (unmasked ones only).
    pub size: usize,
}

/// Positions of the elements in a channel slice of a weight shaped
/// `[out, in, ...]`.
pub(crate) fn slice_indices(shape: &[usize], granularity: Granularity, index: usize) -> Vec<usize> {
    let (out, inp) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    match granularity {
        Granularity::Element => vec![index],
        Granularity::OutChannel => (index * inp * inner..(index + 1) * inp * inner).collect(),
        Granularity::InChannel => (0..out)
            .flat_map(|o| {
                let start = (o * inp + index) * inner;
                start..start + inner
            })
            .collect(),
    }
}

pub(crate) fn candidate_count(shape: &[usize], granularity: Granularity) -> usize {
    match granularity {
        Granularity::Element => shape.iter().product(),
        Granularity::OutChannel => shape[0],
        Granularity::InChannel => shape[1],
    }
}

/// Scores every unmasked candidate of every prunable tensor, in graph order
/// then index order.
///
/// Magnitude criteria score an element by `|w|` (L1) or `w²` (L2) and a
/// channel by the L1 or L2 norm of its slice. The random criterion draws
/// one uniform value per candidate position from `seed`, masked or not, so
/// a position keeps its score across pruning rounds.
pub fn score_candidates(
    model: &ModelGraph,
    masks: &MaskSet,
    method: Method,
    criterion: Criterion,
    seed: Option<u64>,
) -> Result<Vec<CandidateUnit>, PruneError> {
    let tensors = list_prunable_tensors(model);
    if tensors.is_empty() {
        return Err(PruneError::NothingToPrune);
    }
    let granularity = method.granularity();
    let mut rng = match criterion {
        Criterion::Random => Some(Rng::new(
            seed.ok_or_else(|| PruneError::Plan("random criterion requires a seed".into()))?,
        )),
        _ => None,
    };
    let mut out = Vec::new();
    for t in &tensors {
        let param = &model.params()[t.param];
        let shape = param.tensor.shape();
        let w = param.tensor.data();
        let mask = masks.get(&t.name).map(|m| m.data());
        let live = |i: usize| mask.is_none_or(|m| m[i] != 0.0);
        for index in 0..candidate_count(shape, granularity) {
            let draw = rng.as_mut().map(|r| r.uniform_f64());
            let (size, l1, l2sq) = if granularity == Granularity::Element {
                let v = w[index] as f64;
                (usize::from(live(index)), v.abs(), v * v)
            } else {
                let idx = slice_indices(shape, granularity, index);
                let size = idx.iter().filter(|&&i| live(i)).count();
                let l1 = idx.iter().map(|&i| (w[i] as f64).abs()).sum::<f64>();
                let l2sq = idx.iter().map(|&i| (w[i] as f64).powi(2)).sum::<f64>();
                (size, l1, l2sq)
            };
            if size == 0 {
                continue;
            }
            let score = match (criterion, granularity) {
                (Criterion::Random, _) => draw.expect("rng present"),
                (Criterion::L1, _) => l1,
                (Criterion::L2, Granularity::Element) => l2sq,
                (Criterion::L2, _) => l2sq.sqrt(),
            };
            out.push(CandidateUnit {
                tensor: t.name.clone(),
                granularity,
                index,
                score,
                size,
            });
        }
    }
    Ok(out)
}
