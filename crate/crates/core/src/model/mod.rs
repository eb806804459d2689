//! Network graphs, builders, unit probes and checkpoint I/O.

pub mod checkpoint;
mod graph;
mod probe;
mod zoo;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, LoadedCheckpoint};
pub use graph::{Architecture, Forward, Layer, LayerKind, ModelGraph, ParamRole, Source};
pub use probe::{probe_units, unit_activations, UnitAggregation, UnitKind, UnitRef};
pub use zoo::{
    build_mini_inception, build_mini_inception_from, build_plain_cnn, InceptionWidths, MiniInceptionSpec,
    PlainCnnSpec,
};

use crate::engine::EngineError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model graph: {0}")]
    Graph(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A prunable tensor: every conv and linear weight, never a bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunableTensor {
    pub name: String,
    pub param: usize,
    pub role: ParamRole,
    pub numel: usize,
}

/// Prunable tensors in graph order. Their element counts are the
/// denominator of every pruning rate.
pub fn list_prunable_tensors(model: &ModelGraph) -> Vec<PrunableTensor> {
    model
        .params()
        .iter()
        .enumerate()
        .filter(|(i, _)| model.role(*i).is_prunable())
        .map(|(i, p)| PrunableTensor {
            name: p.name.clone(),
            param: i,
            role: model.role(i),
            numel: p.tensor.numel(),
        })
        .collect()
}
