//! Two-stage retrieval.
//!
//! Stage 1 searches the image index with the query image embedding and joins
//! each hit to its entity record. Stage 2 expands the text query with each
//! entity's name and description and fetches the top passages from a
//! [`TextBackend`]. Each stage-1 entity becomes one [`KnowledgeSnippet`].

mod backend;
mod remote;

pub use backend::{parse_corpus_line, CorpusPassage, LocalLexicalBackend, Passage, TextBackend};
pub use remote::{parse_search_response, RemoteConfig, RemoteSearchBackend, API_KEY_ENV};

use std::io::Write;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, Embedding};
use crate::error::{Error, Result};
use crate::index::HnswIndex;
use crate::store::{EntityRecord, EntityStore};
use crate::text::{collapse_whitespace, token_count, truncate_tokens};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_L: usize = 3;
pub const DEFAULT_TRUNCATION_LIMIT: usize = 400;
pub const EXPANSION_TOKEN_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Entities fetched in stage 1.
    pub k: usize,
    /// Passages fetched per entity in stage 2.
    pub l: usize,
    /// Per-passage token limit.
    pub truncation_limit: usize,
    /// Concurrent stage-2 requests for backends that benefit from it.
    pub max_in_flight: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            l: DEFAULT_L,
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
            max_in_flight: 4,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("l", self.l),
            ("truncation_limit", self.truncation_limit),
            ("max_in_flight", self.max_in_flight),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// A query image with its patch tokens plus the text question.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalQuery {
    pub image_embedding: Embedding,
    pub patch_embeddings: Vec<Embedding>,
    pub text: String,
    pub text_embedding: Embedding,
}

impl MultimodalQuery {
    pub fn new(
        image_embedding: Embedding,
        patch_embeddings: Vec<Embedding>,
        text: impl Into<String>,
        text_embedding: Embedding,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("query text"));
        }
        if patch_embeddings.is_empty() {
            return Err(Error::EmptyInput("query patch embeddings"));
        }
        let dim = image_embedding.dim();
        check_dim(dim, text_embedding.dim())?;
        for p in &patch_embeddings {
            check_dim(dim, p.dim())?;
        }
        Ok(Self {
            image_embedding,
            patch_embeddings,
            text,
            text_embedding,
        })
    }
}

/// An image index paired with the entity records for its vectors.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    index: HnswIndex,
    store: EntityStore,
}

impl KnowledgeBase {
    /// Pairs an index with a store, requiring identical id sets.
    pub fn bind(index: HnswIndex, store: EntityStore) -> Result<Self> {
        if index.len() != store.len() {
            return Err(Error::Misaligned(format!(
                "index holds {} vectors, store holds {} records",
                index.len(),
                store.len()
            )));
        }
        if let Some(id) = index.ids().iter().find(|&&id| !store.contains(id)) {
            return Err(Error::Misaligned(format!(
                "index id {id} has no store record"
            )));
        }
        Ok(Self { index, store })
    }

    pub fn index(&self) -> &HnswIndex {
        &self.index
    }

    pub fn store(&self) -> &EntityStore {
        &self.store
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Hit {
    pub entity: EntityRecord,
    /// Cosine similarity to the query image.
    pub score: f64,
}

/// Top-k entities for a query image, in index ranking order.
pub fn stage1_retrieve(kb: &KnowledgeBase, image: &Embedding, k: usize) -> Result<Vec<Stage1Hit>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    kb.index
        .search(image, k)?
        .into_iter()
        .map(|hit| {
            Ok(Stage1Hit {
                entity: kb.store.get(hit.id)?.clone(),
                score: hit.score,
            })
        })
        .collect()
}

fn push_segment(out: &mut String, segment: &str) {
    if segment.is_empty() {
        return;
    }
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(segment);
    if !segment.ends_with(['.', '!', '?']) {
        out.push('.');
    }
}

/// `"{entity_name}. {description}. {q}"` capped at [`EXPANSION_TOKEN_CAP`] tokens.
pub fn expand_query(q: &str, entity: &EntityRecord) -> String {
    expand_query_capped(q, entity, EXPANSION_TOKEN_CAP)
}

/// Query expansion with an explicit token cap.
///
/// The description is cut from the right to fit. `q` is always kept
/// verbatim at the end; if the name and `q` alone exceed the cap, the name
/// is cut as well.
pub fn expand_query_capped(q: &str, entity: &EntityRecord, cap: usize) -> String {
    let name = collapse_whitespace(&entity.entity_name);
    let description = collapse_whitespace(&entity.description);
    let q_tokens = token_count(q);
    let budget = cap.saturating_sub(q_tokens);
    let name = truncate_tokens(&name, budget);
    let budget = budget - token_count(name);
    let description = truncate_tokens(&description, budget);

    let mut out = String::new();
    push_segment(&mut out, name);
    push_segment(&mut out, description);
    if !out.is_empty() && !q.is_empty() {
        out.push(' ');
    }
    out.push_str(q);
    out
}

/// Stage-2 query for an entity with no user question.
pub fn entity_context_query(entity: &EntityRecord) -> String {
    let mut out = String::new();
    let name = collapse_whitespace(&entity.entity_name);
    let description = collapse_whitespace(&entity.description);
    push_segment(&mut out, truncate_tokens(&name, EXPANSION_TOKEN_CAP));
    let budget = EXPANSION_TOKEN_CAP - token_count(&out);
    push_segment(&mut out, truncate_tokens(&description, budget));
    out
}

/// Top-`l` passages for an expanded query.
pub fn stage2_retrieve<B: TextBackend + ?Sized>(
    backend: &B,
    expanded_query: &str,
    l: usize,
) -> Result<Vec<Passage>> {
    if l == 0 {
        return Err(Error::Config("l must be at least 1".into()));
    }
    let mut passages = backend.search(expanded_query, l)?;
    passages.retain(|p| !p.text.trim().is_empty());
    passages.truncate(l);
    Ok(passages)
}

/// Keeps the first `limit` whitespace tokens.
pub fn truncate_passage(text: &str, limit: usize) -> String {
    truncate_tokens(text, limit).to_string()
}

/// One retrieved image reference with its entity text and passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    #[serde(flatten)]
    pub entity: EntityRecord,
    pub stage1_score: f64,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoFailure {
    pub rank: usize,
    pub entity_id: u64,
    pub message: String,
}

/// Snippets in stage-1 order plus any per-entity stage-2 failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub snippets: Vec<KnowledgeSnippet>,
    pub failures: Vec<StageTwoFailure>,
}

impl Retrieval {
    pub fn is_degraded(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Writes one JSON object per snippet, each carrying its 1-based rank.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            rank: usize,
            #[serde(flatten)]
            snippet: &'a KnowledgeSnippet,
        }
        for (i, snippet) in self.snippets.iter().enumerate() {
            serde_json::to_writer(
                &mut w,
                &Line {
                    rank: i + 1,
                    snippet,
                },
            )
            .map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs both retrieval stages against a bound knowledge base.
pub struct Retriever<'a, B> {
    kb: &'a KnowledgeBase,
    backend: B,
    config: RetrievalConfig,
}

impl<'a, B: TextBackend> Retriever<'a, B> {
    pub fn new(kb: &'a KnowledgeBase, backend: B, config: RetrievalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kb,
            backend,
            config,
        })
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        self.kb
    }

    pub fn retrieve_query(&self, query: &MultimodalQuery) -> Result<Retrieval> {
        self.retrieve(&query.image_embedding, &query.text)
    }

    pub fn retrieve(&self, image: &Embedding, text: &str) -> Result<Retrieval> {
        self.retrieve_top(image, text, self.config.k)
    }

    /// Like [`Self::retrieve`] with an explicit stage-1 depth; `k == 0`
    /// returns no snippets.
    pub fn retrieve_top(&self, image: &Embedding, text: &str, k: usize) -> Result<Retrieval> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("query text"));
        }
        if k == 0 {
            return Ok(Retrieval {
                snippets: Vec::new(),
                failures: Vec::new(),
            });
        }
        let hits = stage1_retrieve(self.kb, image, k)?;
        let queries: Vec<String> = hits.iter().map(|h| expand_query(text, &h.entity)).collect();
        let fetched = self.fetch_all(&queries);

        let mut snippets = Vec::with_capacity(hits.len());
        let mut failures = Vec::new();
        for (rank, (hit, result)) in hits.into_iter().zip(fetched).enumerate() {
            let passages = match result {
                Ok(p) => p,
                Err(e) => {
                    failures.push(StageTwoFailure {
                        rank: rank + 1,
                        entity_id: hit.entity.id,
                        message: e.to_string(),
                    });
                    Vec::new()
                }
            };
            snippets.push(KnowledgeSnippet {
                entity: hit.entity,
                stage1_score: hit.score,
                passages,
            });
        }
        Ok(Retrieval { snippets, failures })
    }

    /// Stage-2 passages for one query string, truncated.
    pub fn fetch_passages(&self, query: &str) -> Result<Vec<String>> {
        let limit = self.config.truncation_limit;
        Ok(stage2_retrieve(&self.backend, query, self.config.l)?
            .into_iter()
            .map(|p| truncate_passage(&p.text, limit))
            .collect())
    }

    fn fetch_all(&self, queries: &[String]) -> Vec<Result<Vec<String>>> {
        if queries.len() < 2 || !self.backend.benefits_from_concurrency() {
            return queries.iter().map(|q| self.fetch_passages(q)).collect();
        }
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.config.max_in_flight) {
            thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|q| s.spawn(move || self.fetch_passages(q)))
                    .collect();
                for h in handles {
                    out.push(
                        h.join().unwrap_or_else(|_| {
                            Err(Error::Backend("stage-2 worker panicked".into()))
                        }),
                    );
                }
            });
        }
        out
    }
}

/// Convenience wrapper over [`Retriever::retrieve_query`].
pub fn retrieve<B: TextBackend>(
    kb: &KnowledgeBase,
    backend: B,
    query: &MultimodalQuery,
    config: &RetrievalConfig,
) -> Result<Retrieval> {
    Retriever::new(kb, backend, config.clone())?.retrieve_query(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::HnswParams;

    fn kb(vectors: &[(u64, &str, &[f32])]) -> KnowledgeBase {
        let dim = vectors[0].2.len();
        let index = HnswIndex::build(
            dim,
            HnswParams::default(),
            vectors
                .iter()
                .map(|(id, _, v)| (*id, Embedding::new(v.to_vec()).unwrap()))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let store = EntityStore::from_records(
            vectors
                .iter()
                .map(|(id, name, _)| EntityRecord::new(*id, *name, format!("{name} description"))),
        )
        .unwrap();
        KnowledgeBase::bind(index, store).unwrap()
    }

    #[test]
    fn expansion_template() {
        let e = EntityRecord::new(1, "One World Trade Center", "skyscraper in Lower Manhattan");
        let q = "Who designed the tallest building in the picture?";
        assert_eq!(
            expand_query(q, &e),
            "One World Trade Center. skyscraper in Lower Manhattan. Who designed the tallest building in the picture?"
        );
        let bare = EntityRecord::new(1, "Louvre", "  ");
        assert_eq!(expand_query("Where is it?", &bare), "Louvre. Where is it?");
        let spaced = EntityRecord::new(1, " Big \n Ben ", "clock tower.");
        assert_eq!(expand_query("q  x", &spaced), "Big Ben. clock tower. q  x");
    }

    #[test]
    fn expansion_cap() {
        let long: Vec<String> = (0..10_000).map(|i| format!("d{i}")).collect();
        let e = EntityRecord::new(1, "Some Entity", long.join(" "));
        let q = "What  is this thing?";
        let out = expand_query(q, &e);
        assert_eq!(token_count(&out), EXPANSION_TOKEN_CAP);
        assert!(out.ends_with(q));
        assert!(out.starts_with("Some Entity. d0 d1"));
        // q alone over the cap still survives verbatim.
        let huge_q: String = (0..600).map(|i| format!("q{i} ")).collect();
        assert!(expand_query(&huge_q, &e).ends_with(&huge_q));
    }

    #[test]
    fn entity_context() {
        let e = EntityRecord::new(1, "Louvre", "art museum in Paris");
        assert_eq!(entity_context_query(&e), "Louvre. art museum in Paris.");
        assert_eq!(entity_context_query(&EntityRecord::new(2, "X", "")), "X.");
    }

    #[test]
    fn bind_rejects_misalignment() {
        let index = HnswIndex::build(
            2,
            HnswParams::default(),
            vec![(1, Embedding::new(vec![1.0, 0.0]).unwrap())],
        )
        .unwrap();
        let store = EntityStore::from_records([EntityRecord::new(2, "B", "")]).unwrap();
        assert!(matches!(
            KnowledgeBase::bind(index.clone(), store),
            Err(Error::Misaligned(_))
        ));
        assert!(KnowledgeBase::bind(index, EntityStore::new()).is_err());
    }

    #[test]
    fn stage1_saturates_and_matches() {
        let kb = kb(&[(42, "A", &[1.0, 0.0]), (7, "B", &[0.0, 1.0])]);
        let hits = stage1_retrieve(&kb, &Embedding::new(vec![1.0, 0.0]).unwrap(), 3).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].entity.id, 42);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    struct Failing;
    impl TextBackend for Failing {
        fn search(&self, _: &str, _: usize) -> Result<Vec<Passage>> {
            Err(Error::Backend("down".into()))
        }
    }

    struct FailsFor(&'static str);
    impl TextBackend for FailsFor {
        fn search(&self, q: &str, _: usize) -> Result<Vec<Passage>> {
            if q.starts_with(self.0) {
                Err(Error::Backend("down".into()))
            } else {
                Ok(vec![Passage {
                    text: format!("about {q}"),
                    score: 1.0,
                }])
            }
        }
        fn benefits_from_concurrency(&self) -> bool {
            true
        }
    }

    #[test]
    fn degraded_entities_keep_their_snippet() {
        let kb = kb(&[
            (1, "A", &[1.0, 0.0]),
            (2, "B", &[0.8, 0.6]),
            (3, "C", &[0.0, 1.0]),
        ]);
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let r = Retriever::new(&kb, FailsFor("B."), RetrievalConfig::default())
            .unwrap()
            .retrieve(&q, "what?")
            .unwrap();
        let ids: Vec<u64> = r.snippets.iter().map(|s| s.entity.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert!(r.snippets[1].passages.is_empty());
        assert_eq!(r.snippets[0].passages.len(), 1);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].rank, 2);

        let all_down = Retriever::new(
            &kb,
            Failing,
            RetrievalConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap()
        .retrieve(&q, "what?")
        .unwrap();
        assert_eq!(all_down.snippets.len(), 1);
        assert!(all_down.snippets[0].passages.is_empty());
    }

    #[test]
    fn empty_corpus_gives_empty_passages() {
        let kb = kb(&[(1, "A", &[1.0, 0.0])]);
        let cfg = RetrievalConfig {
            k: 1,
            ..Default::default()
        };
        let r = Retriever::new(&kb, LocalLexicalBackend::default(), cfg)
            .unwrap()
            .retrieve(&Embedding::new(vec![1.0, 0.0]).unwrap(), "q")
            .unwrap();
        assert_eq!(r.snippets.len(), 1);
        assert!(r.snippets[0].passages.is_empty());
        assert!(!r.is_degraded());
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig {
            l: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(RetrievalConfig::default().k, 3);
        assert_eq!(RetrievalConfig::default().l, 3);
        assert_eq!(RetrievalConfig::default().truncation_limit, 400);
    }

    #[test]
    fn snippet_export_lines() {
        let kb = kb(&[(1, "A", &[1.0, 0.0]), (2, "B", &[0.0, 1.0])]);
        let backend = LocalLexicalBackend::from_texts(["A is first", "B is second"]);
        let r = Retriever::new(&kb, backend, RetrievalConfig::default())
            .unwrap()
            .retrieve(&Embedding::new(vec![1.0, 0.1]).unwrap(), "which?")
            .unwrap();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["rank"], 1);
        assert_eq!(lines[0]["entity_name"], "A");
        assert_eq!(lines[0]["passages"][0], "A is first");
    }
}
