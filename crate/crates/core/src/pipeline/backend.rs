use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{top_k, ScoredId};
use crate::error::{Error, Result};
use crate::text::terms;

/// One passage returned by a text backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
    pub score: f64,
}

/// Text retrieval over an expanded query.
///
/// Implementations return at most `limit` non-empty passages ordered by
/// their own notion of relevance.
pub trait TextBackend: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<Passage>>;

    /// Whether independent queries should be issued concurrently.
    fn benefits_from_concurrency(&self) -> bool {
        false
    }
}

impl<T: TextBackend + ?Sized> TextBackend for &T {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<Passage>> {
        (**self).search(query, limit)
    }

    fn benefits_from_concurrency(&self) -> bool {
        (**self).benefits_from_concurrency()
    }
}

impl<T: TextBackend + ?Sized> TextBackend for Box<T> {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<Passage>> {
        (**self).search(query, limit)
    }

    fn benefits_from_concurrency(&self) -> bool {
        (**self).benefits_from_concurrency()
    }
}

/// A corpus passage with a stable id used for tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPassage {
    pub id: u64,
    pub text: String,
}

/// Offline ranker: score is the number of distinct query terms present in
/// the passage. Zero-score passages are never returned; ties go to the
/// lower passage id.
#[derive(Debug, Clone, Default)]
pub struct LocalLexicalBackend {
    passages: Vec<CorpusPassage>,
    slot_of: HashMap<u64, u32>,
    postings: HashMap<String, Vec<u32>>,
}

impl LocalLexicalBackend {
    pub fn new(passages: impl IntoIterator<Item = CorpusPassage>) -> Result<Self> {
        let mut backend = Self::default();
        for p in passages {
            let slot = backend.passages.len() as u32;
            if backend.slot_of.insert(p.id, slot).is_some() {
                return Err(Error::DuplicateId(p.id));
            }
            let unique: HashSet<String> = terms(&p.text).collect();
            for t in unique {
                backend.postings.entry(t).or_default().push(slot);
            }
            backend.passages.push(p);
        }
        Ok(backend)
    }

    /// Passages numbered by position.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().enumerate().map(|(i, t)| CorpusPassage {
            id: i as u64,
            text: t.into(),
        }))
        .expect("positional ids are unique")
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Loads a corpus file: one JSON object per line with `text` and an
    /// optional `id` (defaults to the 0-based line position).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut passages = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            passages.push(parse_corpus_line(&line, i + 1, passages.len() as u64)?);
        }
        Self::new(passages)
    }

    fn scores(&self, query: &str) -> HashMap<u32, u32> {
        let unique: HashSet<String> = terms(query).collect();
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for t in &unique {
            if let Some(list) = self.postings.get(t) {
                for &slot in list {
                    *counts.entry(slot).or_default() += 1;
                }
            }
        }
        counts
    }
}

#[derive(Deserialize)]
struct CorpusLine {
    id: Option<u64>,
    text: String,
}

pub fn parse_corpus_line(line: &str, lineno: usize, default_id: u64) -> Result<CorpusPassage> {
    let parsed: CorpusLine =
        serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
    Ok(CorpusPassage {
        id: parsed.id.unwrap_or(default_id),
        text: parsed.text,
    })
}

impl TextBackend for LocalLexicalBackend {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<Passage>> {
        let scored = self
            .scores(query)
            .into_iter()
            .map(|(slot, hits)| ScoredId::new(self.passages[slot as usize].id, f64::from(hits)));
        Ok(top_k(scored, limit)
            .into_iter()
            .map(|s| Passage {
                text: self.passages[self.slot_of[&s.id] as usize].text.clone(),
                score: s.score,
            })
            .collect())
    }
}
