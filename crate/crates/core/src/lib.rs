//! Magnitude and random pruning for small convolutional networks, with
//! mask-preserving fine-tuning schedules and a similarity-observer
//! interpretability score.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine`] tensors, kernels, the differentiation tape and optimizers;
//! * [`model`] the network graphs, unit probes and the checkpoint format;
//! * [`pruning`] candidate scoring, selection and masks;
//! * [`train`] fine-tuning and the one-shot / iterative schedules;
//! * [`mis`] the two-alternative forced-choice interpretability score;
//! * [`data`] and [`harness`] datasets, sweeps, CSV and SVG output.

pub mod engine;
pub mod rng;

pub use engine::{Param, Tensor};
pub use rng::Rng;
pub mod model;
pub mod pruning;
pub mod data;
pub mod train;
pub mod mis;
pub mod harness;
