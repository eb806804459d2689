use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::engine::{Param, Tape, Tensor, Var};

/// Where a layer reads its input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        weight: usize,
        bias: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Concat,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Conv2d { .. } => "conv",
            Self::Linear { .. } => "linear",
            Self::Relu => "activation",
            Self::MaxPool { .. } => "pool",
            Self::GlobalAvgPool => "pool",
            Self::Concat => "concat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<Source>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ConvWeight,
    LinearWeight,
    Bias,
}

impl ParamRole {
    pub fn is_prunable(self) -> bool {
        !matches!(self, Self::Bias)
    }
}

/// Which builder produced a graph; enough to rebuild it from a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MiniInception,
    PlainCnn,
}

/// Ordered layer list over a flat parameter store. Layers only read from
/// the graph input or from earlier layers, so graph order is a valid
/// evaluation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub(crate) architecture: Architecture,
    pub(crate) in_channels: usize,
    pub(crate) num_classes: usize,
    pub(crate) layers: Vec<Layer>,
    pub(crate) params: Vec<Param>,
    pub(crate) roles: Vec<ParamRole>,
    pub(crate) embedding_layer: usize,
}

/// Output of a recorded forward pass.
pub struct Forward {
    pub logits: Var,
    /// One var per layer, in graph order.
    pub layers: Vec<Var>,
}

impl ModelGraph {
    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if !names.insert(layer.name.as_str()) {
                return Err(ModelError::Graph(format!("duplicate layer name `{}`", layer.name)));
            }
            for src in &layer.inputs {
                if let Source::Layer(j) = src {
                    if *j >= i {
                        return Err(ModelError::Graph(format!(
                            "layer `{}` reads from a later layer",
                            layer.name
                        )));
                    }
                }
            }
            let arity_ok = match layer.kind {
                LayerKind::Concat => !layer.inputs.is_empty(),
                _ => layer.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(ModelError::Graph(format!("bad input count for `{}`", layer.name)));
            }
            match layer.kind {
                LayerKind::Conv2d { weight, bias, .. } => {
                    self.check_param(weight, 4, ParamRole::ConvWeight)?;
                    self.check_param(bias, 1, ParamRole::Bias)?;
                }
                LayerKind::Linear { weight, bias } => {
                    self.check_param(weight, 2, ParamRole::LinearWeight)?;
                    self.check_param(bias, 1, ParamRole::Bias)?;
                }
                _ => {}
            }
        }
        let mut pnames = HashSet::new();
        for p in &self.params {
            if !pnames.insert(p.name.as_str()) {
                return Err(ModelError::Graph(format!("duplicate parameter `{}`", p.name)));
            }
        }
        // shape inference catches concat branches that disagree spatially
        self.infer_output_shapes(&[1, self.in_channels, 32, 32])?;
        Ok(())
    }

    fn check_param(&self, idx: usize, rank: usize, role: ParamRole) -> Result<(), ModelError> {
        match (self.params.get(idx), self.roles.get(idx)) {
            (Some(p), Some(r)) if p.tensor.rank() == rank && *r == role => Ok(()),
            _ => Err(ModelError::Graph(format!("parameter {idx} is not a {role:?} of rank {rank}"))),
        }
    }

    /// Output shape of every layer for an input of the given shape.
    pub fn infer_output_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut tape = Tape::new();
        // a single-sample pass is cheap at these sizes and reuses the kernels' checks
        let x = tape.input(Tensor::zeros(&[1, input[1], input[2], input[3]]));
        let fwd = self.record(&mut tape, x)?;
        Ok(fwd
            .layers
            .iter()
            .map(|v| {
                let mut s = tape.value(*v).shape().to_vec();
                s[0] = input[0];
                s
            })
            .collect())
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn role(&self, param: usize) -> ParamRole {
        self.roles[param]
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Bias parameter paired with a weight, if the weight belongs to a
    /// conv or linear layer.
    pub fn bias_of(&self, weight: usize) -> Option<usize> {
        self.layers.iter().find_map(|l| match l.kind {
            LayerKind::Conv2d { weight: w, bias, .. } | LayerKind::Linear { weight: w, bias } if w == weight => {
                Some(bias)
            }
            _ => None,
        })
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Records a forward pass of `input` on `tape`.
    pub fn record(&self, tape: &mut Tape, input: Var) -> Result<Forward, ModelError> {
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p))
            .collect();
        let mut outs: Vec<Var> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = |s: &Source| match s {
                Source::Input => input,
                Source::Layer(j) => outs[*j],
            };
            let first = src(&layer.inputs[0]);
            let var = match layer.kind {
                LayerKind::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => tape.conv2d(first, param_vars[weight], param_vars[bias], stride, padding)?,
                LayerKind::Linear { weight, bias } => tape.linear(first, param_vars[weight], param_vars[bias])?,
                LayerKind::Relu => tape.relu(first)?,
                LayerKind::MaxPool {
                    kernel,
                    stride,
                    padding,
                } => tape.maxpool2d(first, kernel, stride, padding)?,
                LayerKind::GlobalAvgPool => tape.global_avgpool(first)?,
                LayerKind::Concat => {
                    let vars: Vec<Var> = layer.inputs.iter().map(src).collect();
                    tape.concat(&vars)?
                }
            };
            outs.push(var);
        }
        let logits = *outs.last().ok_or_else(|| ModelError::Graph("empty graph".into()))?;
        Ok(Forward { logits, layers: outs })
    }

    /// Logits for a batch `[N, C, H, W]` without keeping the tape.
    pub fn logits(&self, batch: Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let fwd = self.record(&mut tape, x)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Penultimate (pooled feature) vectors for a batch, `[N, D]`.
    pub fn embeddings(&self, batch: Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let fwd = self.record(&mut tape, x)?;
        Ok(tape.value(fwd.layers[self.embedding_layer]).clone())
    }

    /// Parameters are bitwise equal to another graph's.
    pub fn params_bit_eq(&self, other: &ModelGraph) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.tensor.bit_eq(&b.tensor))
    }
}
