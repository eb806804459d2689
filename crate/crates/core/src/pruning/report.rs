use serde::Serialize;

use super::MaskSet;
use crate::model::{list_prunable_tensors, ModelGraph};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TensorSparsity {
    pub name: String,
    pub total: usize,
    pub pruned: usize,
}

impl TensorSparsity {
    pub fn achieved_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.pruned as f64 / self.total as f64
        }
    }
}

/// Exact pruned/total counts over prunable elements, per tensor and overall.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SparsityReport {
    pub tensors: Vec<TensorSparsity>,
    pub total: usize,
    pub pruned: usize,
}

impl SparsityReport {
    pub fn from_tensors(tensors: Vec<TensorSparsity>) -> Self {
        let total = tensors.iter().map(|t| t.total).sum();
        let pruned = tensors.iter().map(|t| t.pruned).sum();
        Self { tensors, total, pruned }
    }

    pub fn achieved_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.pruned as f64 / self.total as f64
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSparsity> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Counts mask zeros over the prunable tensors. Bias masks are ignored.
pub fn sparsity_report(model: &ModelGraph, masks: &MaskSet) -> SparsityReport {
    let tensors = list_prunable_tensors(model)
        .into_iter()
        .map(|t| {
            let pruned = masks
                .get(&t.name)
                .map_or(0, |m| m.data().iter().filter(|v| **v == 0.0).count());
            TensorSparsity {
                name: t.name,
                total: t.numel,
                pruned,
            }
        })
        .collect();
    SparsityReport::from_tensors(tensors)
}
