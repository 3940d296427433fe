//! Vector primitives shared by every other module: the [`Embedding`] type,
//! cosine and dot-product scoring, softmax normalization, deterministic
//! top-k selection and the `RVE1` embedding file format.
//!
//! # `RVE1` layout
//!
//! All integers are little-endian, no padding and no footer.
//!
//! ```text
//! magic  b"RVE1"             4 bytes
//! dim    u32                 4 bytes
//! count  u64                 8 bytes
//! data   count * dim * f32   row-major
//! ```

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"RVE1";
pub const EMBEDDING_HEADER_LEN: u64 = 16;

const NORM_TOLERANCE: f64 = 1e-6;

/// A fixed-dimension real vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput(
                "embedding must have at least one component",
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateVector(format!(
                "component {pos} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Returns a copy scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateVector("zero-norm vector".into()));
        }
        let values = self
            .values
            .iter()
            .map(|&v| (f64::from(v) / norm) as f32)
            .collect();
        Ok(Self { values })
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

/// Dot product of two equal-length slices, accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("zero-norm vector".into()));
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Softmax over a set of similarity scores, computed with max subtraction.
pub fn softmax_scores(sims: &[f64]) -> Result<Vec<f64>> {
    if sims.is_empty() {
        return Err(Error::EmptyInput("softmax over an empty score list"));
    }
    if sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::DegenerateVector("non-finite score".into()));
    }
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// A record identifier paired with its score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredId {
    pub id: u64,
    pub score: f64,
}

impl ScoredId {
    pub fn new(id: u64, score: f64) -> Self {
        Self { id, score }
    }

    /// Result-list order: score descending, then id ascending.
    /// `Less` means `self` ranks ahead of `other`. `0.0` and `-0.0` tie.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or_else(|| other.score.total_cmp(&self.score))
            .then_with(|| self.id.cmp(&other.id))
    }
}

// Heap adaptor: the greatest element is the worst-ranked one.
struct Ranked(ScoredId);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Exact top-k selection with a bounded heap of size `k`.
///
/// The result is sorted by [`ScoredId::rank_cmp`] and has `min(k, len)`
/// entries. `k == 0` yields an empty list.
pub fn top_k<I>(candidates: I, k: usize) -> Vec<ScoredId>
where
    I: IntoIterator<Item = ScoredId>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for candidate in candidates {
        if heap.len() < k {
            heap.push(Ranked(candidate));
        } else if let Some(worst) = heap.peek() {
            if candidate.rank_cmp(&worst.0) == Ordering::Less {
                heap.pop();
                heap.push(Ranked(candidate));
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
}

/// A set of uniform-dimension vectors as stored in an `RVE1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub vectors: Vec<Embedding>,
}

impl EmbeddingFile {
    pub fn new(dim: usize, vectors: Vec<Embedding>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dimension must be at least 1".into()));
        }
        for v in &vectors {
            check_dim(dim, v.dim())?;
        }
        Ok(Self { dim, vectors })
    }

    /// Byte length of an encoded file with `count` rows of `dim` floats.
    pub fn encoded_len(dim: usize, count: usize) -> u64 {
        EMBEDDING_HEADER_LEN + (count as u64) * (dim as u64) * 4
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_embeddings(w, self.dim, &self.vectors)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        read_embeddings(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let actual_len = file.metadata()?.len();
        let mut r = BufReader::new(file);
        let (dim, count) = read_embedding_header(&mut r)?;
        let expected =
            Self::encoded_len(dim, 0).saturating_add(count.saturating_mul(dim as u64 * 4));
        if actual_len != expected {
            return Err(Error::CorruptFile(format!(
                "{}: header predicts {expected} bytes, file has {actual_len}",
                path.display()
            )));
        }
        let vectors = read_embedding_rows(&mut r, dim, count)?;
        Ok(Self { dim, vectors })
    }
}

/// Writes vectors in `RVE1` format. Every vector must have dimension `dim`.
pub fn write_embeddings<W: Write>(mut w: W, dim: usize, vectors: &[Embedding]) -> Result<()> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    for v in vectors {
        check_dim(dim, v.dim())?;
    }
    w.write_all(&EMBEDDING_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(vectors.len() as u64).to_le_bytes())?;
    for v in vectors {
        write_f32_row(&mut w, v.as_slice())?;
    }
    Ok(())
}

pub(crate) fn write_f32_row<W: Write>(w: &mut W, row: &[f32]) -> io::Result<()> {
    for x in row {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a complete `RVE1` stream. Trailing bytes are rejected.
pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingFile> {
    let (dim, count) = read_embedding_header(&mut r)?;
    let vectors = read_embedding_rows(&mut r, dim, count)?;
    let mut probe = [0u8; 1];
    if read_fully(&mut r, &mut probe)? != 0 {
        return Err(Error::CorruptFile("trailing bytes after payload".into()));
    }
    Ok(EmbeddingFile { dim, vectors })
}

/// Decodes an in-memory `RVE1` buffer.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile> {
    read_embeddings(bytes)
}

pub(crate) fn read_embedding_header<R: Read>(r: &mut R) -> Result<(usize, u64)> {
    let mut header = [0u8; EMBEDDING_HEADER_LEN as usize];
    let got = read_fully(r, &mut header)?;
    if got < 4 {
        return Err(Error::CorruptFile(format!(
            "embedding header truncated at {got} bytes"
        )));
    }
    if header[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected RVE1",
            String::from_utf8_lossy(&header[..4])
        )));
    }
    if got < header.len() {
        return Err(Error::CorruptFile(format!(
            "embedding header truncated at {got} bytes"
        )));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("dimension must be at least 1".into()));
    }
    Ok((dim, count))
}

pub(crate) fn read_embedding_rows<R: Read>(
    r: &mut R,
    dim: usize,
    count: u64,
) -> Result<Vec<Embedding>> {
    // Capacity is capped so a forged count cannot force a huge allocation.
    let mut vectors = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut row = vec![0u8; dim * 4];
    for i in 0..count {
        if read_fully(r, &mut row)? != row.len() {
            return Err(Error::CorruptFile(format!(
                "payload truncated in row {i} of {count}"
            )));
        }
        let values: Vec<f32> = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let v = Embedding::new(values).map_err(|e| Error::CorruptFile(format!("row {i}: {e}")))?;
        vectors.push(v);
    }
    Ok(vectors)
}

/// Like `read_exact` but reports how many bytes were read before EOF.
pub(crate) fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
