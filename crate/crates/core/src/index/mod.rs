//! Dense vector search over L2-normalized embeddings.
//!
//! [`HnswIndex`] provides approximate k-nearest-neighbor search; [`exact_search`]
//! is the exhaustive scan used as ground truth. Exposed scores are cosine
//! similarities.

mod hnsw;
mod persist;

pub use hnsw::{HnswIndex, HnswParams};
pub use persist::{decode_index, encode_index, INDEX_MAGIC, INDEX_VERSION};

use crate::embedding::{check_dim, dot, top_k, Embedding, ScoredId};
use crate::error::{Error, Result};

/// Row-major storage of unit-norm vectors keyed by external record ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Normalizes `v` and appends it. Returns the row index.
    pub fn push(&mut self, id: u64, v: &Embedding) -> Result<usize> {
        check_dim(self.dim, v.dim())?;
        let unit = v.normalized()?;
        self.data.extend_from_slice(unit.as_slice());
        self.ids.push(id);
        Ok(self.ids.len() - 1)
    }

    /// Appends a row that is already unit-norm, bypassing normalization.
    pub(crate) fn push_raw(&mut self, id: u64, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
        self.ids.push(id);
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub(crate) fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn embedding(&self, index: usize) -> Embedding {
        Embedding::new(self.row(index).to_vec()).expect("stored rows are finite")
    }

    pub(crate) fn normalize_query(&self, query: &Embedding) -> Result<Embedding> {
        check_dim(self.dim, query.dim())?;
        query.normalized()
    }
}

/// Exhaustive cosine top-k over every stored vector.
pub fn exact_search(vectors: &VectorStore, query: &Embedding, k: usize) -> Result<Vec<ScoredId>> {
    if vectors.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let q = vectors.normalize_query(query)?;
    let q = q.as_slice();
    let scored = vectors
        .rows()
        .zip(vectors.ids())
        .map(|(row, &id)| ScoredId::new(id, dot(q, row)));
    Ok(top_k(scored, k))
}
