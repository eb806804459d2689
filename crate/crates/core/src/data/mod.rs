//! In-memory labelled image datasets.

mod idx;
mod synthetic;

pub use idx::{load_idx_dataset, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::{SyntheticShapes, COLOR_FAMILIES, SHAPES};

use crate::engine::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    Magic { path: String, expected: u32, found: u32 },
    #[error("{path}: unsupported IDX dimensions {dims:?}")]
    Dims { path: String, dims: Vec<usize> },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Images stored as NCHW floats in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<usize>,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        dims: [usize; 3],
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let [channels, height, width] = dims;
        let per = channels * height * width;
        if per == 0 || images.len() != per * labels.len() {
            return Err(DataError::CountMismatch {
                images: if per == 0 { 0 } else { images.len() / per },
                labels: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self {
            images,
            labels,
            channels,
            height,
            width,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into an `[N,C,H,W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("non-empty batch");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..*self
        }
    }

    /// Per-class split: within each class the first `1 - val_fraction` of
    /// samples (rounded) go to train, the rest to validation.
    pub fn split(&self, val_fraction: f64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(DataError::Invalid(format!("val_fraction {val_fraction} outside [0, 1)")));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for members in &by_class {
            let n_train = ((members.len() as f64) * (1.0 - val_fraction)).round() as usize;
            train.extend_from_slice(&members[..n_train]);
            val.extend_from_slice(&members[n_train..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Class labels with no sample.
    pub fn missing_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.num_classes).filter(|c| !seen[*c]).collect()
    }
}

/// Training and validation sets.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}
