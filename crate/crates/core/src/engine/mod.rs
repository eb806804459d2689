//! Minimal deterministic tensor engine: kernels, a differentiation tape,
//! and the SGD/Adam optimizers with an exponential learning-rate schedule.

mod gemm;
pub mod ops;
mod optim;
mod tape;
mod tensor;

pub use ops::{concat_channels, conv2d, cross_entropy, global_avgpool, linear, maxpool2d, relu, softmax};
pub use optim::{lr_at_epoch, OptimizerKind, OptimizerState};
pub use tape::{Tape, Var};
pub use tensor::{Param, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),
    #[error("parameter index {0} not provided to backward")]
    UnknownParam(usize),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}
