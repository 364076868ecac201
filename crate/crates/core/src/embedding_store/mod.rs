//! Embedding sets and dataset manifests.
//!
//! Vectors are held in memory as `f64` but every value produced by this
//! module (loading, normalization, fusion) lies on the `f32` grid, so a set
//! written to disk and read back is bit-identical to the in-memory one.

mod format;
mod manifest;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use format::{load_embeddings, read_blob, read_sidecar, save_embeddings, write_blob, write_sidecar, Sidecar, BLOB_MAGIC, BLOB_VERSION};
pub use manifest::{validate_manifest, Coverage, DatasetManifest};

/// Identified, labeled, fixed-dimension vectors for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dataset_id: String,
    dim: usize,
    image_ids: Vec<String>,
    labels: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Builds a validated set. `vectors` is row-major, `image_ids.len() * dim` long.
    pub fn new(
        dataset_id: impl Into<String>,
        dim: usize,
        image_ids: Vec<String>,
        labels: Vec<String>,
        vectors: Vec<f64>,
    ) -> Result<Self> {
        let dataset_id = dataset_id.into();
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        if image_ids.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} image ids but {} identity labels",
                image_ids.len(),
                labels.len()
            )));
        }
        if vectors.len() != image_ids.len() * dim {
            return Err(Error::Invalid(format!(
                "{} vector components for {} records of dim {}",
                vectors.len(),
                image_ids.len(),
                dim
            )));
        }
        let mut index = HashMap::with_capacity(image_ids.len());
        for (i, (id, label)) in image_ids.iter().zip(&labels).enumerate() {
            if id.is_empty() {
                return Err(Error::Record {
                    index: i,
                    message: "empty image id".into(),
                });
            }
            if label.is_empty() {
                return Err(Error::Record {
                    index: i,
                    message: format!("empty identity label for image {id}"),
                });
            }
            if let Some(first) = index.insert(id.clone(), i) {
                return Err(Error::Record {
                    index: i,
                    message: format!("duplicate image id {id} (first seen at record {first})"),
                });
            }
        }
        for (i, row) in vectors.chunks_exact(dim).enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Record {
                    index: i,
                    message: format!("non-finite component {c} for image {}", image_ids[i]),
                });
            }
        }
        Ok(Self {
            dataset_id,
            dim,
            image_ids,
            labels,
            vectors,
            index,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Row-major vector data.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn label_of(&self, image_id: &str) -> Option<&str> {
        self.index_of(image_id).map(|i| self.labels[i].as_str())
    }

    /// Same ids and labels, new vector data of identical shape.
    fn with_vectors(&self, vectors: Vec<f64>) -> Self {
        debug_assert_eq!(vectors.len(), self.vectors.len());
        Self {
            vectors,
            ..self.clone()
        }
    }

    /// Multiplies every component by `factor` (no rounding to `f32`).
    pub fn scaled(&self, factor: f64) -> Self {
        self.with_vectors(self.vectors.iter().map(|v| v * factor).collect())
    }
}

fn norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Unit vector in the direction of `row`, rounded to the `f32` grid.
fn unit_row(row: &[f64], out: &mut Vec<f64>) -> bool {
    let n = norm(row);
    if !(n > 0.0 && n.is_finite()) {
        return false;
    }
    out.extend(row.iter().map(|v| (v / n) as f32 as f64));
    true
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut out = Vec::with_capacity(set.vectors.len());
    for i in 0..set.len() {
        if !unit_row(set.row(i), &mut out) {
            return Err(Error::ZeroNorm {
                image_id: set.image_ids[i].clone(),
            });
        }
    }
    Ok(set.with_vectors(out))
}

/// Per record, `normalize(original + flipped)`.
pub fn fuse_flip(original: &EmbeddingSet, flipped: &EmbeddingSet) -> Result<EmbeddingSet> {
    if original.dim != flipped.dim {
        return Err(Error::DimMismatch {
            left: original.dim,
            right: flipped.dim,
        });
    }
    if original.len() != flipped.len() {
        return Err(Error::Invalid(format!(
            "original has {} records, flipped has {}",
            original.len(),
            flipped.len()
        )));
    }
    if let Some(i) = (0..original.len()).find(|&i| original.image_ids[i] != flipped.image_ids[i]) {
        return Err(Error::Record {
            index: i,
            message: format!(
                "image id order differs: {} vs {}",
                original.image_ids[i], flipped.image_ids[i]
            ),
        });
    }
    let mut out = Vec::with_capacity(original.vectors.len());
    let mut sum = vec![0.0; original.dim];
    for i in 0..original.len() {
        for ((s, a), b) in sum.iter_mut().zip(original.row(i)).zip(flipped.row(i)) {
            *s = a + b;
        }
        // An antipodal pair cancels to (numerically) nothing.
        let scale = norm(original.row(i)) + norm(flipped.row(i));
        if norm(&sum) <= scale * 1e-12 || !unit_row(&sum, &mut out) {
            return Err(Error::ZeroNorm {
                image_id: original.image_ids[i].clone(),
            });
        }
    }
    Ok(original.with_vectors(out))
}
