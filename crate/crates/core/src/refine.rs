//! Query-oriented visual token refinement.
//!
//! Query-image patches are scored against the text embedding by dot product
//! and the best `m` kept. Patches of a retrieved image are scored by the sum
//! of their dot products with the kept query patches, computed as one dot
//! product against the summed query vector, and the best `m` kept. Kept
//! tokens are emitted in original patch order; ties go to the lower index.

use crate::embedding::{check_dim, dot, top_k, Embedding, ScoredId};
use crate::error::{Error, Result};

pub const DEFAULT_M: usize = 144;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSelection {
    /// Original patch positions, strictly increasing.
    pub indices: Vec<usize>,
    pub tokens: Vec<Embedding>,
    /// The score each kept token was selected by.
    pub scores: Vec<f64>,
}

impl TokenSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Component-wise sum of the selected tokens, in `f64`.
    pub fn summed_vector(&self) -> Vec<f64> {
        let dim = self.tokens.first().map_or(0, Embedding::dim);
        let mut sum = vec![0.0f64; dim];
        for t in &self.tokens {
            for (acc, &x) in sum.iter_mut().zip(t.as_slice()) {
                *acc += f64::from(x);
            }
        }
        sum
    }
}

fn select(patches: &[Embedding], scores: Vec<f64>, m: usize) -> TokenSelection {
    let best = top_k(
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoredId::new(i as u64, s)),
        m,
    );
    let mut indices: Vec<usize> = best.iter().map(|s| s.id as usize).collect();
    indices.sort_unstable();
    TokenSelection {
        tokens: indices.iter().map(|&i| patches[i].clone()).collect(),
        scores: indices.iter().map(|&i| scores[i]).collect(),
        indices,
    }
}

fn check_inputs(patches: &[Embedding], dim: usize, m: usize) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("patch embeddings"));
    }
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    for p in patches {
        check_dim(dim, p.dim())?;
    }
    Ok(())
}

/// Keeps the `m` query-image patches with the highest dot product against
/// the text embedding.
pub fn refine_query_tokens(
    patches: &[Embedding],
    text_embedding: &Embedding,
    m: usize,
) -> Result<TokenSelection> {
    check_inputs(patches, text_embedding.dim(), m)?;
    let q = text_embedding.as_slice();
    let scores = patches.iter().map(|p| dot(p.as_slice(), q)).collect();
    Ok(select(patches, scores, m))
}

/// Keeps the `m` retrieved-image patches with the highest summed dot
/// product against the selected query tokens.
pub fn refine_retrieved_tokens(
    retrieved: &[Embedding],
    query_selection: &TokenSelection,
    m: usize,
) -> Result<TokenSelection> {
    let Some(first) = query_selection.tokens.first() else {
        return Err(Error::EmptyInput("query token selection"));
    };
    check_inputs(retrieved, first.dim(), m)?;
    let sum = query_selection.summed_vector();
    let scores = retrieved
        .iter()
        .map(|p| {
            p.as_slice()
                .iter()
                .zip(&sum)
                .map(|(&x, &s)| f64::from(x) * s)
                .sum()
        })
        .collect();
    Ok(select(retrieved, scores, m))
}

/// Plain-bitmap (PBM `P1`) mask of selected patch cells on a grid of
/// `grid_width` columns. Cells past `n` stay unset.
pub fn selection_mask_pbm(indices: &[usize], n: usize, grid_width: usize) -> Result<String> {
    if grid_width == 0 {
        return Err(Error::Shape("grid width must be at least 1".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!("index {bad} outside {n} patches")));
    }
    let height = n.div_ceil(grid_width);
    let mut cells = vec![false; height * grid_width];
    for &i in indices {
        cells[i] = true;
    }
    let mut out = format!("P1\n{grid_width} {height}\n");
    for row in cells.chunks(grid_width) {
        let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}
