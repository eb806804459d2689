use std::collections::BTreeMap;

use super::score::{candidate_count, slice_indices};
use super::{Granularity, PruneError, PruneSet};
use crate::engine::Tensor;
use crate::model::ModelGraph;

/// Binary masks keyed by parameter name. A parameter without an entry is
/// treated as fully live.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskSet {
    masks: BTreeMap<String, Tensor>,
}

impl MaskSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a mask, rejecting anything other than exact 0.0 / 1.0 values.
    pub fn insert(&mut self, name: impl Into<String>, mask: Tensor) -> Result<(), PruneError> {
        let name = name.into();
        if mask.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(PruneError::NonBinaryMask(name));
        }
        self.masks.insert(name, mask);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.masks.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.masks.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Live (1.0) entries of one mask; `None` if the parameter is unmasked.
    pub fn survivors(&self, name: &str) -> Option<usize> {
        self.get(name).map(|m| m.data().iter().filter(|v| **v == 1.0).count())
    }

    /// Live entries summed over all masks.
    pub fn total_survivors(&self) -> usize {
        self.masks.keys().filter_map(|n| self.survivors(n)).sum()
    }
}

/// Masks that zero exactly the positions named by `prune_set`. Every
/// prunable tensor gets a mask; output-channel pruning also masks the
/// matching bias element.
pub fn build_mask(model: &ModelGraph, prune_set: &PruneSet) -> Result<MaskSet, PruneError> {
    let mut masks: BTreeMap<String, Tensor> = BTreeMap::new();
    for t in crate::model::list_prunable_tensors(model) {
        masks.insert(t.name, Tensor::ones(model.params()[t.param].tensor.shape()));
    }
    for unit in &prune_set.units {
        let param = model
            .param_index(&unit.tensor)
            .ok_or_else(|| PruneError::UnknownParameter(unit.tensor.clone()))?;
        let shape = model.params()[param].tensor.shape().to_vec();
        let mask = masks
            .get_mut(&unit.tensor)
            .ok_or_else(|| PruneError::UnknownParameter(unit.tensor.clone()))?;
        if unit.index >= candidate_count(&shape, unit.granularity) {
            return Err(PruneError::IndexOutOfRange {
                tensor: unit.tensor.clone(),
                granularity: unit.granularity,
                index: unit.index,
            });
        }
        let data = mask.data_mut();
        for i in slice_indices(&shape, unit.granularity, unit.index) {
            data[i] = 0.0;
        }
        if unit.granularity == Granularity::OutChannel {
            if let Some(bias) = model.bias_of(param) {
                let p = &model.params()[bias];
                let bias_mask = masks
                    .entry(p.name.clone())
                    .or_insert_with(|| Tensor::ones(p.tensor.shape()));
                bias_mask.data_mut()[unit.index] = 0.0;
            }
        }
    }
    let mut set = MaskSet::new();
    for (name, m) in masks {
        set.insert(name, m)?;
    }
    Ok(set)
}

/// Multiplies every masked parameter by its mask. Idempotent.
pub fn apply_masks(model: &mut ModelGraph, masks: &MaskSet) -> Result<(), PruneError> {
    for (name, mask) in masks.iter() {
        let param = model
            .param_mut(name)
            .ok_or_else(|| PruneError::UnknownParameter(name.to_string()))?;
        if param.tensor.shape() != mask.shape() {
            return Err(PruneError::ShapeMismatch {
                name: name.to_string(),
                mask: mask.shape().to_vec(),
                param: param.tensor.shape().to_vec(),
            });
        }
        for (w, m) in param.tensor.data_mut().iter_mut().zip(mask.data()) {
            if *m == 0.0 {
                *w = 0.0;
            }
        }
    }
    Ok(())
}

/// Elementwise AND. A name present in only one set is copied as is.
pub fn compose_masks(old: &MaskSet, new: &MaskSet) -> Result<MaskSet, PruneError> {
    let mut out = old.clone();
    for (name, m) in new.iter() {
        match out.masks.get_mut(name) {
            Some(existing) => {
                if existing.shape() != m.shape() {
                    return Err(PruneError::ShapeMismatch {
                        name: name.to_string(),
                        mask: m.shape().to_vec(),
                        param: existing.shape().to_vec(),
                    });
                }
                for (a, b) in existing.data_mut().iter_mut().zip(m.data()) {
                    *a *= *b;
                }
            }
            None => {
                out.masks.insert(name.to_string(), m.clone());
            }
        }
    }
    Ok(out)
}

/// Zeroes gradient entries of masked positions.
pub(crate) fn mask_gradients(model: &mut ModelGraph, masks: &MaskSet) {
    for (name, mask) in masks.iter() {
        if let Some(p) = model.param_mut(name) {
            if p.tensor.grad().is_none() {
                continue;
            }
            for (g, m) in p.tensor.grad_mut().iter_mut().zip(mask.data()) {
                if *m == 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}
