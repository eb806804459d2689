//! Network builders.
//!
//! Weights use a fan-in scaled uniform init drawn from the seeded [`Rng`]:
//! conv kernels `U(±sqrt(6 / fan_in))` (He-uniform, suited to the ReLU that
//! follows every conv) and the classifier `U(±1 / sqrt(fan_in))`. Biases
//! start at zero. Parameters are drawn in graph order, so a given seed
//! always yields the same tensors.

use super::graph::{Architecture, Layer, LayerKind, ModelGraph, ParamRole, Source};
use super::ModelError;
use crate::engine::{Param, Tensor};
use crate::rng::Rng;

/// Branch widths of one inception block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionWidths {
    pub b1: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub b5_reduce: usize,
    pub b5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub fn output(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pool_proj
    }
}

/// Layout of the desk-scale inception network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniInceptionSpec {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub blocks: [InceptionWidths; 2],
    pub num_classes: usize,
}

impl MiniInceptionSpec {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            stem_channels: 32,
            blocks: [
                InceptionWidths {
                    b1: 16,
                    b3_reduce: 16,
                    b3: 24,
                    b5_reduce: 8,
                    b5: 12,
                    pool_proj: 12,
                },
                InceptionWidths {
                    b1: 32,
                    b3_reduce: 32,
                    b3: 48,
                    b5_reduce: 16,
                    b5: 24,
                    pool_proj: 24,
                },
            ],
            num_classes,
        }
    }
}

/// A stack of `conv k×k → ReLU → maxpool 2×2` stages, then global average
/// pooling and a linear classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainCnnSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
}

impl PlainCnnSpec {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            widths: vec![16, 32],
            kernel: 3,
            num_classes,
        }
    }
}

struct Builder {
    rng: Rng,
    layers: Vec<Layer>,
    params: Vec<Param>,
    roles: Vec<ParamRole>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            rng: Rng::new(seed),
            layers: Vec::new(),
            params: Vec::new(),
            roles: Vec::new(),
        }
    }

    fn add_param(&mut self, name: String, tensor: Tensor, role: ParamRole) -> usize {
        self.params.push(Param::new(name, tensor));
        self.roles.push(role);
        self.params.len() - 1
    }

    fn layer(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<Source>) -> Source {
        self.layers.push(Layer {
            name: name.into(),
            kind,
            inputs,
        });
        Source::Layer(self.layers.len() - 1)
    }

    /// conv + ReLU; returns the ReLU output.
    fn conv_relu(&mut self, name: &str, input: Source, cin: usize, cout: usize, k: usize) -> Source {
        let fan_in = (cin * k * k) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| rng.range(-bound, bound));
        let weight = self.add_param(format!("{name}.weight"), w, ParamRole::ConvWeight);
        let bias = self.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamRole::Bias);
        let conv = self.layer(
            name,
            LayerKind::Conv2d {
                weight,
                bias,
                stride: 1,
                padding: k / 2,
            },
            vec![input],
        );
        self.layer(format!("{name}.relu"), LayerKind::Relu, vec![conv])
    }

    fn linear(&mut self, name: &str, input: Source, fan_in: usize, out: usize) -> Source {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[out, fan_in], |_| rng.range(-bound, bound));
        let weight = self.add_param(format!("{name}.weight"), w, ParamRole::LinearWeight);
        let bias = self.add_param(format!("{name}.bias"), Tensor::zeros(&[out]), ParamRole::Bias);
        self.layer(name, LayerKind::Linear { weight, bias }, vec![input])
    }

    fn inception(&mut self, name: &str, input: Source, cin: usize, w: &InceptionWidths) -> Source {
        let b1 = self.conv_relu(&format!("{name}.b1"), input, cin, w.b1, 1);
        let r3 = self.conv_relu(&format!("{name}.b3_reduce"), input, cin, w.b3_reduce, 1);
        let b3 = self.conv_relu(&format!("{name}.b3"), r3, w.b3_reduce, w.b3, 3);
        let r5 = self.conv_relu(&format!("{name}.b5_reduce"), input, cin, w.b5_reduce, 1);
        let b5 = self.conv_relu(&format!("{name}.b5"), r5, w.b5_reduce, w.b5, 5);
        let pool = self.layer(
            format!("{name}.pool"),
            LayerKind::MaxPool {
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            vec![input],
        );
        let proj = self.conv_relu(&format!("{name}.pool_proj"), pool, cin, w.pool_proj, 1);
        self.layer(format!("{name}.concat"), LayerKind::Concat, vec![b1, b3, b5, proj])
    }

    fn finish(
        self,
        architecture: Architecture,
        in_channels: usize,
        num_classes: usize,
        embedding_layer: usize,
    ) -> Result<ModelGraph, ModelError> {
        let graph = ModelGraph {
            architecture,
            in_channels,
            num_classes,
            layers: self.layers,
            params: self.params,
            roles: self.roles,
            embedding_layer,
        };
        graph.validate()?;
        Ok(graph)
    }
}

fn check_classes(num_classes: usize) -> Result<(), ModelError> {
    if num_classes < 2 {
        return Err(ModelError::Config(format!("num_classes must be >= 2, got {num_classes}")));
    }
    Ok(())
}

/// Stem conv 3×3 + ReLU + maxpool 2×2, two inception blocks, global
/// average pool, linear classifier.
pub fn build_mini_inception(num_classes: usize, seed: u64) -> Result<ModelGraph, ModelError> {
    build_mini_inception_from(&MiniInceptionSpec::new(3, num_classes), seed)
}

pub fn build_mini_inception_from(spec: &MiniInceptionSpec, seed: u64) -> Result<ModelGraph, ModelError> {
    check_classes(spec.num_classes)?;
    let mut b = Builder::new(seed);
    let stem = b.conv_relu("stem.conv", Source::Input, spec.in_channels, spec.stem_channels, 3);
    let pooled = b.layer(
        "stem.pool",
        LayerKind::MaxPool {
            kernel: 2,
            stride: 2,
            padding: 0,
        },
        vec![stem],
    );
    let mut x = pooled;
    let mut width = spec.stem_channels;
    for (i, block) in spec.blocks.iter().enumerate() {
        x = b.inception(&format!("inc{}", i + 1), x, width, block);
        width = block.output();
    }
    let gap = b.layer("gap", LayerKind::GlobalAvgPool, vec![x]);
    let Source::Layer(gap_idx) = gap else { unreachable!() };
    b.linear("fc", gap, width, spec.num_classes);
    b.finish(Architecture::MiniInception, spec.in_channels, spec.num_classes, gap_idx)
}

pub fn build_plain_cnn(spec: &PlainCnnSpec, seed: u64) -> Result<ModelGraph, ModelError> {
    check_classes(spec.num_classes)?;
    if spec.widths.is_empty() || spec.kernel.is_multiple_of(2) {
        return Err(ModelError::Config("plain cnn needs >= 1 stage and an odd kernel".into()));
    }
    let mut b = Builder::new(seed);
    let mut x = Source::Input;
    let mut cin = spec.in_channels;
    for (i, &w) in spec.widths.iter().enumerate() {
        let act = b.conv_relu(&format!("conv{}", i + 1), x, cin, w, spec.kernel);
        x = b.layer(
            format!("pool{}", i + 1),
            LayerKind::MaxPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            vec![act],
        );
        cin = w;
    }
    let gap = b.layer("gap", LayerKind::GlobalAvgPool, vec![x]);
    let Source::Layer(gap_idx) = gap else { unreachable!() };
    b.linear("fc", gap, cin, spec.num_classes);
    b.finish(Architecture::PlainCnn, spec.in_channels, spec.num_classes, gap_idx)
}
