use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MisError;
use crate::data::Dataset;
use crate::model::ModelGraph;

/// Pairwise image similarity over probe-set ids.
pub trait Similarity {
    fn sim(&self, a: usize, b: usize) -> Result<f64, MisError>;
}

#[derive(Clone, Debug)]
pub enum SimilarityBackend {
    /// Cosine between raw pixel vectors.
    PixelCosine,
    /// Cosine between pooled features of a frozen reference network.
    EmbedCosine(Arc<ModelGraph>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    PixelCosine,
    EmbedCosine,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PixelCosine => "pixel_cosine",
            Self::EmbedCosine => "embed_cosine",
        })
    }
}

impl SimilarityBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Self::PixelCosine => BackendKind::PixelCosine,
            Self::EmbedCosine(_) => BackendKind::EmbedCosine,
        }
    }

    /// Embeds every probe image once. The bank is the cache: build it once
    /// per probe set and share it across the models being scored.
    pub fn bank(&self, probe: &Dataset) -> Result<EmbeddingBank, MisError> {
        let name = self.kind().to_string();
        match self {
            Self::PixelCosine => {
                Ok(EmbeddingBank::from_vectors(&name, (0..probe.len()).map(|i| probe.image(i).to_vec()).collect()))
            }
            Self::EmbedCosine(model) => {
                let indices: Vec<usize> = (0..probe.len()).collect();
                let chunks: Vec<Vec<Vec<f32>>> = indices
                    .par_chunks(64)
                    .map(|chunk| {
                        let emb = model.embeddings(probe.batch(chunk).0)?;
                        let d = emb.shape()[1];
                        Ok(emb.data().chunks(d).map(<[f32]>::to_vec).collect())
                    })
                    .collect::<Result<_, MisError>>()?;
                Ok(EmbeddingBank::from_vectors(&name, chunks.into_iter().flatten().collect()))
            }
        }
    }
}

/// Unit-normalised feature vectors indexed by probe-set id.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    backend: String,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingBank {
    pub fn from_vectors(backend: &str, vectors: Vec<Vec<f32>>) -> Self {
        let vectors = vectors
            .into_iter()
            .map(|v| {
                let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
                let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
                v.iter().map(|&x| x as f64 * scale).collect()
            })
            .collect();
        Self { backend: backend.to_string(), vectors }
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl Similarity for EmbeddingBank {
    fn sim(&self, a: usize, b: usize) -> Result<f64, MisError> {
        let va = self.vectors.get(a).ok_or(MisError::MissingImage(a))?;
        let vb = self.vectors.get(b).ok_or(MisError::MissingImage(b))?;
        if a == b {
            return Ok(1.0);
        }
        Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
    }
}
