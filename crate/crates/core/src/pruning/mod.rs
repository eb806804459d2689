//! Pruning: candidate scoring, prune-set selection, and binary masks for
//! unstructured, output-channel and input-channel ("connection sparsity")
//! pruning.
//!
//! Masks are soft: pruned weights are zeroed in place and tensor shapes are
//! kept. A pruning rate is always a fraction of the elements of the
//! prunable tensors (conv and linear weights); biases are never counted.

mod mask;
mod report;
mod score;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub(crate) use mask::mask_gradients;
pub use mask::{apply_masks, build_mask, compose_masks, MaskSet};
pub use report::{sparsity_report, SparsityReport, TensorSparsity};
pub use score::{score_candidates, CandidateUnit, Granularity};
pub use select::{select_prune_set, PruneSet};

use crate::model::ModelGraph;

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("invalid pruning plan: {0}")]
    Plan(String),
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
    #[error("model has no prunable tensors")]
    NothingToPrune,
    #[error("index {index} out of range for `{tensor}` at {granularity} granularity")]
    IndexOutOfRange {
        tensor: String,
        granularity: Granularity,
        index: usize,
    },
    #[error("mask for `{0}` is not binary")]
    NonBinaryMask(String),
    #[error("mask shape {mask:?} does not match `{name}` {param:?}")]
    ShapeMismatch {
        name: String,
        mask: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("mask for unknown parameter `{0}`")]
    UnknownParameter(String),
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [Self] = &[$(Self::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = PruneError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(PruneError::Unknown { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

named_enum!(
    /// What gets removed.
    Method, "method", {
        Unstructured => "unstructured",
        StructuredOut => "structured_out",
        ConnectionSparsity => "connection_sparsity",
    }
);

named_enum!(
    /// How candidates are ranked; lowest scores are pruned first.
    Criterion, "criterion", {
        L1 => "l1",
        L2 => "l2",
        Random => "random",
    }
);

named_enum!(
    /// `Global` ranks candidates across all prunable tensors; `Local`
    /// applies the target rate to each tensor separately.
    Scope, "scope", {
        Global => "global",
        Local => "local",
    }
);

impl Method {
    pub fn granularity(self) -> Granularity {
        match self {
            Self::Unstructured => Granularity::Element,
            Self::StructuredOut => Granularity::OutChannel,
            Self::ConnectionSparsity => Granularity::InChannel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningPlan {
    pub method: Method,
    pub criterion: Criterion,
    pub scope: Scope,
    pub target_rate: f64,
    /// Required for the random criterion, rejected otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PruningPlan {
    pub fn new(method: Method, criterion: Criterion, scope: Scope, target_rate: f64) -> Self {
        Self {
            method,
            criterion,
            scope,
            target_rate,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_rate(&self, target_rate: f64) -> Self {
        Self {
            target_rate,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if !(0.0..=1.0).contains(&self.target_rate) {
            return Err(PruneError::Plan(format!("target_rate {} outside [0, 1]", self.target_rate)));
        }
        match (self.criterion, self.seed) {
            (Criterion::Random, None) => Err(PruneError::Plan("random criterion requires a seed".into())),
            (Criterion::L1 | Criterion::L2, Some(_)) => {
                Err(PruneError::Plan(format!("{} criterion takes no seed", self.criterion)))
            }
            _ => Ok(()),
        }
    }
}

/// Scores the model under `plan`, selects enough candidates to reach the
/// plan's rate (counting what `masks` already prunes), and returns the
/// composed masks. The model is updated in place.
pub fn prune_step(
    model: &mut ModelGraph,
    masks: &MaskSet,
    plan: &PruningPlan,
) -> Result<(MaskSet, PruneSet), PruneError> {
    plan.validate()?;
    let candidates = score_candidates(model, masks, plan.method, plan.criterion, plan.seed)?;
    let report = sparsity_report(model, masks);
    let selected = select_prune_set(candidates, plan.target_rate, plan.scope, &report)?;
    let fresh = build_mask(model, &selected)?;
    let composed = compose_masks(masks, &fresh)?;
    apply_masks(model, &composed)?;
    Ok((composed, selected))
}
