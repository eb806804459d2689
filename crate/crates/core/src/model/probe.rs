use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::{LayerKind, ModelGraph, Source};
use super::ModelError;
use crate::engine::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    /// One output channel of a conv layer.
    Channel,
    /// One class unit of the classifier (pre-softmax logit).
    Logit,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Channel => "channel",
            Self::Logit => "logit",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub layer: String,
    pub index: usize,
    pub kind: UnitKind,
}

/// How a channel's spatial response map is reduced to one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitAggregation {
    #[default]
    Mean,
    Max,
}

/// Every conv output channel in graph order, then one unit per class.
pub fn probe_units(model: &ModelGraph) -> Vec<UnitRef> {
    let mut units = Vec::new();
    for layer in model.layers() {
        match layer.kind {
            LayerKind::Conv2d { weight, .. } => {
                let cout = model.params()[weight].tensor.shape()[0];
                units.extend((0..cout).map(|index| UnitRef {
                    layer: layer.name.clone(),
                    index,
                    kind: UnitKind::Channel,
                }));
            }
            LayerKind::Linear { .. } if is_output(model, &layer.name) => {
                units.extend((0..model.num_classes()).map(|index| UnitRef {
                    layer: layer.name.clone(),
                    index,
                    kind: UnitKind::Logit,
                }));
            }
            _ => {}
        }
    }
    units
}

fn is_output(model: &ModelGraph, name: &str) -> bool {
    model.layers().last().is_some_and(|l| l.name == name)
}

/// Activation of every probe unit for every image of `batch`;
/// `result[u][n]` is unit `u` (in [`probe_units`] order) on image `n`.
///
/// Channel units read the post-ReLU map that follows their conv.
pub fn unit_activations(
    model: &ModelGraph,
    batch: Tensor,
    aggregation: UnitAggregation,
) -> Result<Vec<Vec<f32>>, ModelError> {
    let n = batch.shape()[0];
    let mut tape = Tape::new();
    let x = tape.input(batch);
    let fwd = model.record(&mut tape, x)?;
    let layers = model.layers();
    let mut out = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Conv2d { .. } => {
                let relu = layers
                    .iter()
                    .position(|l| l.kind == LayerKind::Relu && l.inputs == [Source::Layer(i)])
                    .unwrap_or(i);
                let value = tape.value(fwd.layers[relu]);
                let s = value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                for ch in 0..c {
                    let acts = (0..n)
                        .map(|b| {
                            let plane = &value.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                            match aggregation {
                                UnitAggregation::Mean => plane.iter().sum::<f32>() / hw as f32,
                                UnitAggregation::Max => plane.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                            }
                        })
                        .collect();
                    out.push(acts);
                }
            }
            LayerKind::Linear { .. } if i + 1 == layers.len() => {
                let value = tape.value(fwd.layers[i]);
                let c = value.shape()[1];
                for unit in 0..c {
                    out.push((0..n).map(|b| value.data()[b * c + unit]).collect());
                }
            }
            _ => {}
        }
    }
    Ok(out)
}
